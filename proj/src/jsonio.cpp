#include "fedsdwc/jsonio.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fedsdwc::jsonio {

std::string format_double(double v) {
  if (std::isnan(v)) return "null";
  if (std::isinf(v)) return v > 0 ? "1e999" : "-1e999";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  std::string s(buf);
  // make sure the token still parses as a JSON number with a float shape
  if (s.find_first_of(".eE") == std::string::npos) s += ".0";
  return s;
}

namespace {

void escape_string(const std::string& s, std::string& out) {
  out += '"';
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  out += '"';
}

void dump_rec(const json& j, int indent, int depth, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent * depth), ' ');
  const std::string pad_in(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        escape_string(it.key(), out);
        out += ": ";
        dump_rec(it.value(), indent, depth + 1, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& el : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        dump_rec(el, indent, depth + 1, out);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::string:
      escape_string(j.get_ref<const std::string&>(), out);
      return;
    case json::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      return;
    case json::value_t::number_integer:
      out += std::to_string(j.get<std::int64_t>());
      return;
    case json::value_t::number_unsigned:
      out += std::to_string(j.get<std::uint64_t>());
      return;
    case json::value_t::number_float:
      out += format_double(j.get<double>());
      return;
    default:
      out += "null";
      return;
  }
}

}  // namespace

std::string dump(const json& j, int indent) {
  std::string out;
  dump_rec(j, indent, 0, out);
  out += "\n";
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, dump(j));
}

void write_f32(const std::filesystem::path& path, const Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  std::vector<float> row(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = static_cast<float>(m(i, j));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!f) throw IoError("write failed: " + path.string());
}

Mat read_f32(const std::filesystem::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  Mat m(rows, cols);
  std::vector<float> row(static_cast<std::size_t>(cols));
  for (Eigen::Index i = 0; i < rows; ++i) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!f) throw IoError("short read in " + path.string());
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(row[static_cast<std::size_t>(j)]);
  }
  return m;
}

void write_i64(const std::filesystem::path& path, const LabelVec& v) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::int64_t x = v(i);
    f.write(reinterpret_cast<const char*>(&x), sizeof(x));
  }
  if (!f) throw IoError("write failed: " + path.string());
}

LabelVec read_i64(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::int64_t> vals;
  std::int64_t x = 0;
  while (f.read(reinterpret_cast<char*>(&x), sizeof(x))) vals.push_back(x);
  LabelVec v(static_cast<Eigen::Index>(vals.size()));
  for (std::size_t i = 0; i < vals.size(); ++i) v(static_cast<Eigen::Index>(i)) = vals[i];
  return v;
}

}  // namespace fedsdwc::jsonio
