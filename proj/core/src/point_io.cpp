#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gdmae/pillar_grid.hpp"

namespace gdmae {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<double> parse_numbers(const std::string& line, char sep) {
  std::vector<double> values;
  std::stringstream ss(line);
  std::string field;
  if (sep == ' ') {
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof()) return {};
    return values;
  }
  while (std::getline(ss, field, sep)) {
    std::size_t used = 0;
    try {
      values.push_back(std::stod(field, &used));
    } catch (const std::exception&) {
      return {};
    }
    while (used < field.size() && std::isspace(static_cast<unsigned char>(field[used]))) ++used;
    if (used != field.size()) return {};
  }
  return values;
}

void push_row(PointCloud& cloud, const std::vector<double>& v, const std::string& where) {
  if (v.size() != 3 && v.size() != 4) {
    throw std::runtime_error(where + ": expected 3 or 4 values per point, got " + std::to_string(v.size()));
  }
  if (v.size() == 4) {
    if (cloud.intensity.size() != cloud.points.size()) {
      throw std::runtime_error(where + ": intensity column present on only some rows");
    }
    cloud.intensity.push_back(v[3]);
  } else if (cloud.has_intensity()) {
    throw std::runtime_error(where + ": intensity column present on only some rows");
  }
  cloud.points.push_back({v[0], v[1], v[2]});
}

PointCloud read_csv(std::istream& in, const std::string& path) {
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto v = parse_numbers(line, ',');
    if (v.empty()) {
      if (lineno == 1) continue;  // header row
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": cannot parse '" + line + "'");
    }
    push_row(cloud, v, path + ":" + std::to_string(lineno));
  }
  return cloud;
}

PointCloud read_ply(std::istream& in, const std::string& path) {
  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw std::runtime_error(path + ": missing 'ply' magic");
  std::size_t vertices = 0;
  std::vector<std::string> props;
  bool in_vertex = false, ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "format") {
      std::string fmt;
      ss >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      std::string name;
      ss >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ss >> vertices;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      break;
    }
  }
  if (!ascii) throw std::runtime_error(path + ": only ASCII PLY is supported");
  auto find = [&](const std::string& n) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == n) return static_cast<int>(i);
    return -1;
  };
  const int ix = find("x"), iy = find("y"), iz = find("z");
  int ii = find("intensity");
  if (ii < 0) ii = find("i");
  if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error(path + ": vertex element needs x, y, z properties");
  PointCloud cloud;
  for (std::size_t k = 0; k < vertices; ++k) {
    if (!std::getline(in, line)) throw std::runtime_error(path + ": truncated vertex list");
    const auto v = parse_numbers(line, ' ');
    if (v.size() < props.size()) throw std::runtime_error(path + ": short vertex row " + std::to_string(k));
    cloud.points.push_back({v[static_cast<std::size_t>(ix)], v[static_cast<std::size_t>(iy)], v[static_cast<std::size_t>(iz)]});
    if (ii >= 0) cloud.intensity.push_back(v[static_cast<std::size_t>(ii)]);
  }
  return cloud;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

PointCloud read_point_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open point file " + path);
  PointCloud cloud = ends_with(path, ".ply") ? read_ply(in, path) : read_csv(in, path);
  cloud.validate();
  return cloud;
}

void write_points_csv(const std::string& path, std::span<const Point3> points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& p : points) out << fmt_double(p[0]) << ',' << fmt_double(p[1]) << ',' << fmt_double(p[2]) << '\n';
}

void write_points_ply(const std::string& path, std::span<const Point3> points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& p : points) out << fmt_double(p[0]) << ' ' << fmt_double(p[1]) << ' ' << fmt_double(p[2]) << '\n';
}

}  // namespace gdmae
