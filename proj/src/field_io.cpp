#include "elastrecon/field_io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace elastrecon {

namespace {

constexpr const char* kMagic = "EFLD1";
constexpr const char* kLayout = "row-major-x-fastest";
constexpr const char* kDtype = "f64-le";

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xFFu) << (8 * (7 - i));
  return r;
}

}  // namespace

std::string field_header(const Field& f) {
  const Grid& g = f.grid();
  nlohmann::ordered_json h;
  h["magic"] = kMagic;
  h["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
  h["spacing"] = g.h;
  h["origin"] = {g.origin[0], g.origin[1], g.origin[2]};
  h["components"] = f.components();
  h["layout"] = kLayout;
  h["dtype"] = kDtype;
  return h.dump();
}

void write_field(std::ostream& os, const Field& f) {
  os << field_header(f) << '\n';
  std::vector<char> buf(f.data().size() * 8);
  for (std::size_t i = 0; i < f.data().size(); ++i) {
    const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(f.data()[i]));
    std::memcpy(buf.data() + 8 * i, &bits, 8);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!os) throw FieldFormatError("write_field: stream error");
}

void write_field(const std::filesystem::path& path, const Field& f) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FieldFormatError("write_field: cannot open " + path.string());
  write_field(os, f);
}

Field read_field(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FieldFormatError("read_field: missing header line");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FieldFormatError(std::string("read_field: header is not JSON: ") + e.what());
  }
  Grid g;
  std::size_t components = 0;
  try {
    if (h.at("magic").get<std::string>() != kMagic) throw FieldFormatError("read_field: bad magic");
    if (h.at("layout").get<std::string>() != kLayout) throw FieldFormatError("read_field: unsupported layout");
    if (h.at("dtype").get<std::string>() != kDtype) throw FieldFormatError("read_field: unsupported dtype");
    const auto dims = h.at("dims").get<std::vector<std::size_t>>();
    const auto origin = h.at("origin").get<std::vector<double>>();
    if (dims.size() != 3 || origin.size() != 3) throw FieldFormatError("read_field: dims and origin need 3 entries");
    for (int a = 0; a < 3; ++a) {
      g.dims[a] = dims[a];
      g.origin[a] = origin[a];
    }
    g.h = h.at("spacing").get<double>();
    components = h.at("components").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FieldFormatError(std::string("read_field: bad header: ") + e.what());
  }
  if (components == 0) throw FieldFormatError("read_field: zero components");
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw FieldFormatError(std::string("read_field: ") + e.what());
  }

  Field f(g, components);
  std::vector<char> buf(f.data().size() * 8);
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) throw FieldFormatError("read_field: payload too short");
  if (is.peek() != std::char_traits<char>::eof()) throw FieldFormatError("read_field: trailing bytes after payload");
  for (std::size_t i = 0; i < f.data().size(); ++i) {
    std::uint64_t bits = 0;
    std::memcpy(&bits, buf.data() + 8 * i, 8);
    const double v = std::bit_cast<double>(to_le(bits));
    if (!std::isfinite(v)) throw FieldFormatError("read_field: non-finite value");
    f.data()[i] = v;
  }
  return f;
}

Field read_field(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FieldFormatError("read_field: cannot open " + path.string());
  return read_field(is);
}

}  // namespace elastrecon
