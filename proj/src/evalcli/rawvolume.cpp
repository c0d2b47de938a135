#include "bodyvox/evalcli.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>

namespace bodyvox::evalcli {

static_assert(std::endian::native == std::endian::little, "raw volume I/O assumes a little-endian host");

void write_raw_volume(std::ostream& out, const voxcore::ProbVolume& vol) {
  require(vol.data.size() == vol.dims.count(), ErrorCode::dim_mismatch, "volume data length != W*H*D");
  const auto& t = vol.transform;
  nlohmann::ordered_json h;
  h["dims"] = {vol.dims.w, vol.dims.h, vol.dims.d};
  h["order"] = "y-fastest";
  h["dtype"] = "f32le";
  h["space"] = voxcore::to_string(vol.space);
  h["transform"] = {{"translate", {t.translate.x(), t.translate.y(), t.translate.z()}},
                    {"scale", t.scale},
                    {"longest", t.longest}};
  out << h.dump() << '\n';
  std::vector<float> payload(vol.data.begin(), vol.data.end());
  out.write(reinterpret_cast<const char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
  require(bool(out), ErrorCode::io, "raw volume write failed");
}

voxcore::ProbVolume read_raw_volume(std::istream& in) {
  std::string line;
  require(bool(std::getline(in, line)), ErrorCode::malformed_header, "raw volume: missing header line");
  voxcore::ProbVolume vol;
  try {
    const auto h = nlohmann::json::parse(line);
    const auto dims = h.at("dims").get<std::vector<int>>();
    require(dims.size() == 3 && dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorCode::malformed_header,
            "raw volume: dims must be three positive integers");
    require(h.at("order") == "y-fastest", ErrorCode::malformed_header, "raw volume: order must be y-fastest");
    require(h.at("dtype") == "f32le", ErrorCode::malformed_header, "raw volume: dtype must be f32le");
    vol.dims = {dims[0], dims[1], dims[2]};
    vol.space = voxcore::parse_space(h.at("space").get<std::string>());
    if (h.contains("transform")) {
      const auto& t = h.at("transform");
      const auto tr = t.at("translate").get<std::vector<double>>();
      require(tr.size() == 3, ErrorCode::malformed_header, "raw volume: translate needs three values");
      vol.transform = {Vec3(tr[0], tr[1], tr[2]), t.at("scale").get<double>(), t.at("longest").get<int>()};
      require(vol.transform.scale > 0.0 && vol.transform.longest > 0, ErrorCode::malformed_header,
              "raw volume: transform scale must be positive");
    } else {
      vol.transform = {Vec3::Zero(), double(std::max({dims[0], dims[1], dims[2]})), std::max({dims[0], dims[1], dims[2]})};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::malformed_header, std::string("raw volume header: ") + e.what());
  }
  std::vector<float> payload(vol.dims.count());
  in.read(reinterpret_cast<char*>(payload.data()), std::streamsize(payload.size() * sizeof(float)));
  require(std::size_t(in.gcount()) == payload.size() * sizeof(float), ErrorCode::truncated_payload,
          "raw volume: payload shorter than W*H*D*4 bytes");
  require(in.peek() == std::char_traits<char>::eof(), ErrorCode::malformed_payload,
          "raw volume: bytes after the payload");
  vol.data.assign(payload.begin(), payload.end());
  try {
    vol.validate();
  } catch (const Error& e) {
    fail(e.code() == ErrorCode::non_finite ? ErrorCode::non_finite : ErrorCode::malformed_payload, e.what());
  }
  return vol;
}

void write_raw_volume(const std::filesystem::path& path, const voxcore::ProbVolume& vol) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), ErrorCode::io, "cannot write " + path.string());
  write_raw_volume(out, vol);
}

voxcore::ProbVolume read_raw_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), ErrorCode::io, "cannot read " + path.string());
  return read_raw_volume(in);
}

voxcore::ProbVolume read_volume(const std::filesystem::path& path) {
  if (path.extension() == ".binvox") return voxcore::ProbVolume::from_grid(voxcore::read_grid(path));
  return read_raw_volume(path);
}

}  // namespace bodyvox::evalcli
