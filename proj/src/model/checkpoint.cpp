#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "retro3d/model.hpp"

namespace retro3d::model {
namespace {

constexpr char kMagic[4] = {'R', '3', 'D', '1'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_unsigned_v<T>);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.put(static_cast<char>((value >> (8 * b)) & 0xff));
}

template <typename T>
T take(std::istream& in, const std::string& path) {
  T value = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) {
    int c = in.get();
    if (c == EOF) throw std::runtime_error("truncated checkpoint " + path);
    value |= static_cast<T>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string header = nlohmann::json{{"config", to_json(ck.config)}, {"meta", ck.meta}}.dump();
  out.write(kMagic, 4);
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : ck.params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("not a checkpoint: " + path);
  const auto length = take<std::uint64_t>(in, path);
  std::string header(length, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(length))) throw std::runtime_error("truncated checkpoint " + path);
  Checkpoint ck;
  auto j = nlohmann::json::parse(header);
  ck.config = config_from_json(j.at("config"));
  ck.meta = j.value("meta", nlohmann::json::object());
  while (in.peek() != EOF) {
    const auto name_len = take<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint " + path);
    const auto rank = take<std::uint32_t>(in, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(take<std::uint64_t>(in, path));
    std::vector<double> data(shape_size(shape));
    for (double& v : data) v = std::bit_cast<double>(take<std::uint64_t>(in, path));
    ck.params.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return ck;
}

Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks) {
  if (cks.empty()) throw std::invalid_argument("average_checkpoints: nothing to average");
  Checkpoint out;
  out.config = cks[0].config;
  out.meta = cks[0].meta;
  const auto reference = to_json(cks[0].config);
  for (const auto& ck : cks) {
    if (to_json(ck.config) != reference) throw std::invalid_argument("average_checkpoints: configs differ");
    if (ck.params.size() != cks[0].params.size()) throw std::invalid_argument("average_checkpoints: parameter sets differ");
  }
  const double n = static_cast<double>(cks.size());
  for (const auto& [name, first] : cks[0].params) {
    std::vector<double> acc(first.size(), 0.0);
    for (const auto& ck : cks) {
      auto it = ck.params.find(name);
      if (it == ck.params.end() || it->second.shape() != first.shape()) {
        throw std::invalid_argument("average_checkpoints: parameter " + name + " differs");
      }
      auto d = it->second.data();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    for (double& v : acc) v /= n;
    out.params.emplace(name, Tensor(first.shape(), std::move(acc)));
  }
  return out;
}

}  // namespace retro3d::model
