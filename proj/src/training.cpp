#include "smg/training.hpp"

#include <cmath>

namespace smg::training {
namespace {

std::vector<double> term_series(const std::vector<StepRecord>& history, const std::string& term,
                                const std::string& stage) {
  std::vector<double> out;
  for (const auto& r : history) {
    if (!stage.empty() && r.stage != stage) continue;
    for (const auto& [name, value] : r.terms) {
      if (name == term) out.push_back(value);
    }
  }
  if (out.empty()) throw LookupError("no '" + term + "' values recorded" + (stage.empty() ? "" : " in stage " + stage));
  return out;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += v[i];
  return s / static_cast<double>(end - begin);
}

}  // namespace

double StepRecord::term(const std::string& name) const {
  for (const auto& [n, v] : terms) {
    if (n == name) return v;
  }
  throw LookupError("step record has no term " + name);
}

void require_finite(const StepRecord& record) {
  for (const auto& [name, value] : record.terms) {
    if (!std::isfinite(value)) {
      throw DivergenceError("non-finite " + name + " loss in stage '" + record.stage + "' at step " +
                            std::to_string(record.step) + " (level " + std::to_string(record.level) + ")");
    }
  }
}

backbone::Checkpoint pack_generator(const backbone::Generator<float>& gen, backbone::Metadata meta,
                                    std::string_view net) {
  gen.config().write_meta(meta);
  meta["net"] = std::string(net);
  return {gen.params(), std::move(meta)};
}

backbone::Generator<float> unpack_generator(const backbone::Checkpoint& ckpt, std::string_view net) {
  auto it = ckpt.meta.find("net");
  if (it == ckpt.meta.end() || it->second != net) {
    throw FormatError("expected a " + std::string(net) + " checkpoint, found " +
                      (it == ckpt.meta.end() ? std::string("no net key") : "net=" + it->second));
  }
  return backbone::Generator<float>(backbone::GeneratorConfig::from_meta(ckpt.meta), ckpt.params);
}

backbone::Checkpoint read_network_checkpoint(const std::filesystem::path& path, std::string_view what) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw StateError("no trained " + std::string(what) + " network at " + path.string());
  }
  return backbone::load_checkpoint(path);
}

double trailing_mean(const std::vector<StepRecord>& history, const std::string& term, std::size_t window,
                     const std::string& stage) {
  const auto v = term_series(history, term, stage);
  const std::size_t n = std::min(window, v.size());
  return mean_of(v, v.size() - n, v.size());
}

double leading_mean(const std::vector<StepRecord>& history, const std::string& term, std::size_t window,
                    const std::string& stage) {
  const auto v = term_series(history, term, stage);
  return mean_of(v, 0, std::min(window, v.size()));
}

}  // namespace smg::training
