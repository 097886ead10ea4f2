#include "w2s/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json_util.hpp"
#include "w2s/error.hpp"

namespace w2s {

namespace {

constexpr char kMagic[8] = {'W', '2', 'S', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes little-endian hosts");

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const RewardModel& model) {
  detail::json header;
  header["config"] = detail::to_json(model.config());
  header["train_scope"] = model.train_scope() == TrainScope::adapters ? "adapters" : "full";
  detail::json params = detail::json::array();
  for (const Parameter* p : model.parameters()) {
    params.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  }
  header["parameters"] = std::move(params);
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Parameter* p : model.parameters()) {
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!out) throw Error("short write on checkpoint " + path.string());
}

RewardModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError(path.string() + ": not a w2s checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");
  const detail::json header = detail::json::parse(text);

  RewardModel model(detail::model_config_from_json(header.at("config"), "checkpoint.config"));
  const auto& entries = header.at("parameters");
  auto params = model.parameters();
  if (entries.size() != params.size()) {
    throw DataError(path.string() + ": parameter count mismatch with its own config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (entries[i].at("name").get<std::string>() != params[i]->name ||
        entries[i].at("shape").get<Shape>() != params[i]->value.shape()) {
      throw DataError(path.string() + ": unexpected parameter " + entries[i].at("name").get<std::string>());
    }
    in.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(params[i]->value.size() * sizeof(double)));
  }
  if (!in) throw DataError(path.string() + ": truncated parameter data");
  const std::string scope = header.value("train_scope", "full");
  if (scope == "adapters" && model.has_adapters()) model.set_train_scope(TrainScope::adapters);
  return model;
}

}  // namespace w2s
