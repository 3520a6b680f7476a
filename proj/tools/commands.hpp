#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m6/model.hpp"
#include "m6/tokenizer.hpp"

namespace m6::cli {

inline constexpr std::string_view kVersion = "0.1.0";

void register_data(CLI::App& app);
void register_train(CLI::App& app);
void register_generate(CLI::App& app);
void register_eval(CLI::App& app);

/// Every run drops a manifest beside its outputs: the command, tool
/// version, and the fully resolved arguments, enough to replay the run.
inline void write_manifest(const std::filesystem::path& manifest_path,
                           std::string_view command,
                           const nlohmann::ordered_json& args) {
  nlohmann::ordered_json j;
  j["command"] = std::string(command);
  j["version"] = std::string(kVersion);
  j["args"] = args;
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << j.dump(2) << "\n";
}

/// Manifest beside a file output: <file>.manifest.json.
inline std::filesystem::path manifest_for_file(const std::filesystem::path& out) {
  std::filesystem::path p = out;
  p += ".manifest.json";
  return p;
}

struct LoadedModel {
  model::Parameters params;
  tok::Vocab vocab;
};

/// Checkpoint directory layout: model.m6t + model.json + vocab.txt.
inline LoadedModel load_model_dir(const std::filesystem::path& dir) {
  model::Parameters params = model::Parameters::load(dir);
  tok::Vocab vocab = tok::Vocab::load((dir / "vocab.txt").string());
  return {std::move(params), std::move(vocab)};
}

/// Reads a data file where each non-empty line is either a JSON object
/// (clean-corpus record: optional "text" and "image_path" fields) or a
/// plain text line.
struct DataLine {
  std::string text;
  std::string image_path;  // empty for text-only lines
};

inline std::vector<DataLine> load_data_lines(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + file.string());
  std::vector<DataLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    DataLine d;
    if (line.front() == '{') {
      nlohmann::json j = nlohmann::json::parse(line);
      if (j.contains("text")) d.text = j["text"].get<std::string>();
      if (j.contains("image_path")) d.image_path = j["image_path"].get<std::string>();
    } else {
      d.text = line;
    }
    if (!d.text.empty() || !d.image_path.empty()) out.push_back(std::move(d));
  }
  return out;
}

}  // namespace m6::cli
