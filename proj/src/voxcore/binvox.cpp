#include "bodyvox/voxcore.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace bodyvox::voxcore {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

double parse_double(const std::string& token) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  require(ec == std::errc() && ptr == token.data() + token.size(), ErrorCode::malformed_header,
          "binvox: bad number '" + token + "'");
  return v;
}

std::string header_line(std::istream& in) {
  std::string line;
  require(bool(std::getline(in, line)), ErrorCode::malformed_header, "binvox: truncated header");
  return line;
}

}  // namespace

void write_grid(std::ostream& out, const VoxelGrid& grid) {
  require(grid.data.size() == grid.dims.count(), ErrorCode::dim_mismatch,
          "binvox: data length != W*H*D");
  const auto& t = grid.transform;
  out << "#binvox 1\n";
  out << "dim " << grid.dims.d << ' ' << grid.dims.h << ' ' << grid.dims.w << '\n';
  out << "translate " << format_double(t.translate.x()) << ' ' << format_double(t.translate.y())
      << ' ' << format_double(t.translate.z()) << '\n';
  out << "scale " << format_double(t.scale) << '\n';
  out << "data\n";
  std::size_t i = 0;
  const std::size_t n = grid.data.size();
  while (i < n) {
    const std::uint8_t value = grid.data[i] ? 1 : 0;
    std::size_t run = 1;
    while (i + run < n && run < 255 && (grid.data[i + run] ? 1 : 0) == value) ++run;
    out.put(char(value));
    out.put(char(static_cast<unsigned char>(run)));
    i += run;
  }
}

VoxelGrid read_grid(std::istream& in) {
  require(header_line(in) == "#binvox 1", ErrorCode::malformed_header,
          "binvox: missing '#binvox 1' magic");
  GridDims dims;
  GridTransform tf;
  bool have_dim = false;
  bool have_translate = false;
  bool have_scale = false;
  for (;;) {
    const std::string line = header_line(in);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "data") break;
    if (key == "dim") {
      require(bool(ls >> dims.d >> dims.h >> dims.w), ErrorCode::malformed_header,
              "binvox: bad dim line");
      require(dims.w > 0 && dims.h > 0 && dims.d > 0, ErrorCode::malformed_header,
              "binvox: non-positive dimension");
      have_dim = true;
    } else if (key == "translate") {
      std::string a, b, c;
      require(bool(ls >> a >> b >> c), ErrorCode::malformed_header, "binvox: bad translate line");
      tf.translate = Vec3(parse_double(a), parse_double(b), parse_double(c));
      have_translate = true;
    } else if (key == "scale") {
      std::string a;
      require(bool(ls >> a), ErrorCode::malformed_header, "binvox: bad scale line");
      tf.scale = parse_double(a);
      require(tf.scale > 0.0, ErrorCode::malformed_header, "binvox: scale must be positive");
      have_scale = true;
    } else {
      fail(ErrorCode::malformed_header, "binvox: unexpected header line '" + line + "'");
    }
    std::string rest;
    require(!(ls >> rest), ErrorCode::malformed_header, "binvox: trailing tokens in '" + line + "'");
  }
  require(have_dim && have_translate && have_scale, ErrorCode::malformed_header,
          "binvox: header lacks dim/translate/scale");
  tf.longest = dims.longest();

  VoxelGrid grid(dims, tf);
  const std::size_t n = dims.count();
  std::size_t filled = 0;
  while (filled < n) {
    const int value = in.get();
    const int count = in.get();
    require(value != EOF && count != EOF, ErrorCode::truncated_payload,
            "binvox: payload ends after " + std::to_string(filled) + " of " + std::to_string(n) +
                " cells");
    require(value == 0 || value == 1, ErrorCode::malformed_payload, "binvox: run value not 0/1");
    require(count > 0, ErrorCode::malformed_payload, "binvox: zero-length run");
    require(filled + std::size_t(count) <= n, ErrorCode::run_overflow,
            "binvox: run extends past the last cell");
    std::fill_n(grid.data.begin() + std::ptrdiff_t(filled), count, std::uint8_t(value));
    filled += std::size_t(count);
  }
  require(in.peek() == EOF, ErrorCode::run_overflow, "binvox: trailing runs after the last cell");
  return grid;
}

void write_grid(const std::filesystem::path& path, const VoxelGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  write_grid(out, grid);
}

VoxelGrid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorCode::io, "cannot open " + path.string());
  return read_grid(in);
}

}  // namespace bodyvox::voxcore
