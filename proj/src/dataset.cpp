#include "gatewire/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gatewire/errors.hpp"
#include "gatewire/rng.hpp"

namespace gatewire {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("not a number: '" + std::string(s) + "'");
  }
  return v;
}

Tensor Dataset::features_tensor() const { return Tensor({size(), dim}, features); }

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.dim = dim;
  out.num_classes = num_classes;
  out.features.reserve(indices.size() * dim);
  out.labels.reserve(indices.size());
  for (auto i : indices) {
    const auto r = row(i);
    out.features.insert(out.features.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

void Dataset::validate(bool require_all_classes) const {
  if (features.size() != labels.size() * dim) throw DataError("feature matrix does not match label count");
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw LabelError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) + " out of range");
    }
    ++counts[labels[i]];
  }
  for (double v : features)
    if (!std::isfinite(v)) throw DataError("non-finite feature value");
  if (require_all_classes) {
    for (std::size_t c = 0; c < num_classes; ++c)
      if (counts[c] == 0) throw DataError("class " + std::to_string(c) + " has no examples");
  }
}

std::size_t SyntheticSpec::easy_classes() const {
  return static_cast<std::size_t>(std::llround(easy_fraction * static_cast<double>(num_classes)));
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw SpecError("num_classes must be >= 2");
  if (per_class_count < 1) throw SpecError("per_class_count must be >= 1");
  if (dim < 1) throw SpecError("dim must be >= 1");
  if (!(easy_fraction >= 0.0 && easy_fraction <= 1.0)) throw SpecError("easy_fraction must lie in [0, 1]");
  if (!(separation > 0.0)) throw SpecError("separation must be > 0");
  if (!(hard_separation > 0.0 && hard_separation < 1.0)) throw SpecError("hard_separation must lie in (0, 1)");
  if (!(hard_spread > 0.0)) throw SpecError("hard_spread must be > 0");
  if (!(sigma > 0.0)) throw SpecError("sigma must be > 0");
  const std::size_t easy = easy_classes();
  const std::size_t hard = num_classes - easy;
  // One axis per easy centre, one for the hard anchor, one per hard centre.
  const std::size_t needed = easy + (hard > 0 ? 1 + hard : 0);
  if (dim < needed) {
    throw SpecError("dim " + std::to_string(dim) + " too small to place " + std::to_string(num_classes) +
                    " clusters; need at least " + std::to_string(needed));
  }
}

void to_json(json& j, const SyntheticSpec& s) {
  j = {{"num_classes", s.num_classes},
       {"per_class_count", s.per_class_count},
       {"dim", s.dim},
       {"easy_fraction", s.easy_fraction},
       {"separation", s.separation},
       {"hard_separation", s.hard_separation},
       {"hard_spread", s.hard_spread},
       {"sigma", s.sigma},
       {"seed", s.seed}};
}

void from_json(const json& j, SyntheticSpec& s) {
  reject_unknown_keys(j, {"num_classes", "per_class_count", "dim", "easy_fraction", "separation",
                          "hard_separation", "hard_spread", "sigma", "seed"},
                      "synthetic");
  SyntheticSpec d;
  auto take = [&](const char* k, auto& field) {
    if (!j.contains(k)) return;
    try {
      field = j.at(k).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("synthetic: field '") + k + "' has the wrong type");
    }
  };
  take("num_classes", d.num_classes);
  take("per_class_count", d.per_class_count);
  take("dim", d.dim);
  take("easy_fraction", d.easy_fraction);
  take("separation", d.separation);
  take("hard_separation", d.hard_separation);
  take("hard_spread", d.hard_spread);
  take("sigma", d.sigma);
  take("seed", d.seed);
  s = d;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t easy = spec.easy_classes();
  const std::size_t hard = spec.num_classes - easy;
  // Centres on orthogonal axes scaled by a/sqrt(2) are pairwise exactly a apart.
  const double easy_scale = spec.separation * spec.sigma / std::sqrt(2.0);
  const double hard_scale = spec.hard_separation * spec.sigma / std::sqrt(2.0);
  std::vector<std::vector<double>> centres(spec.num_classes, std::vector<double>(spec.dim, 0.0));
  std::vector<double> spreads(spec.num_classes, spec.sigma);
  for (std::size_t c = 0; c < easy; ++c) centres[c][c] = easy_scale;
  for (std::size_t h = 0; h < hard; ++h) {
    auto& centre = centres[easy + h];
    centre[easy] = easy_scale;              // shared anchor, `separation` away from every easy centre
    centre[easy + 1 + h] = hard_scale;      // spread the hard tier around the anchor
    spreads[easy + h] = spec.hard_spread * spec.sigma;
  }
  Rng rng(spec.seed);
  Dataset d;
  d.dim = spec.dim;
  d.num_classes = spec.num_classes;
  d.features.reserve(spec.num_classes * spec.per_class_count * spec.dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class_count; ++k) {
      for (std::size_t f = 0; f < spec.dim; ++f) d.features.push_back(centres[c][f] + spreads[c] * rng.normal());
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

std::string dataset_to_csv(const Dataset& d) {
  std::string out = "label";
  for (std::size_t f = 0; f < d.dim; ++f) out += ",f" + std::to_string(f);
  out += "\n";
  for (std::size_t i = 0; i < d.size(); ++i) {
    out += std::to_string(d.labels[i]);
    for (double v : d.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 2 || header[0] != "label") throw ParseError("header must start with 'label,f0'", 1);
  for (std::size_t f = 1; f < header.size(); ++f) {
    if (header[f] != "f" + std::to_string(f - 1)) {
      throw ParseError("header column " + std::to_string(f) + " should be 'f" + std::to_string(f - 1) + "'", 1);
    }
  }
  Dataset d;
  d.dim = header.size() - 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    int label = 0;
    auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (res.ec != std::errc() || res.ptr != fields[0].data() + fields[0].size() || label < 0) {
      throw LabelError("non-integer or negative label '" + std::string(fields[0]) + "' (line " +
                       std::to_string(line_no) + ")");
    }
    d.labels.push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t f = 1; f < fields.size(); ++f) {
      try {
        const double v = parse_double(fields[f]);
        if (!std::isfinite(v)) throw DataError("non-finite value");
        d.features.push_back(v);
      } catch (const DataError& e) {
        throw ParseError(std::string(e.what()) + " in column " + std::string(header[f]), line_no);
      }
    }
  }
  if (d.labels.empty()) throw DataError("dataset has no rows");
  d.num_classes = static_cast<std::size_t>(max_label + 1);
  return d;
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << dataset_to_csv(d);
  if (!f) throw IoError("failed writing " + path.string());
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read dataset " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return dataset_from_csv(ss.str());
}

Standardizer fit_standardizer(const Dataset& train) {
  if (train.size() == 0) throw DataError("cannot fit standardization on an empty split");
  Standardizer s;
  s.mean.assign(train.dim, 0.0);
  s.scale.assign(train.dim, 0.0);
  const double n = static_cast<double>(train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t f = 0; f < train.dim; ++f) s.mean[f] += train.features[i * train.dim + f];
  for (auto& m : s.mean) m /= n;
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t f = 0; f < train.dim; ++f) {
      const double d = train.features[i * train.dim + f] - s.mean[f];
      s.scale[f] += d * d;
    }
  for (auto& v : s.scale) {
    v = std::sqrt(v / n);
    if (!(v > 0.0)) v = 1.0;  // constant column
  }
  return s;
}

Dataset standardize(const Dataset& d, const Standardizer& s) {
  if (s.mean.size() != d.dim || s.scale.size() != d.dim) {
    throw DimensionError("standardization width " + std::to_string(s.mean.size()) + " vs dataset width " +
                         std::to_string(d.dim));
  }
  Dataset out = d;
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t f = 0; f < d.dim; ++f) {
      auto& v = out.features[i * d.dim + f];
      v = (v - s.mean[f]) / s.scale[f];
    }
  return out;
}

Splits split(const Dataset& d, std::span<const double> fractions, std::uint64_t seed) {
  if (fractions.size() != 3) throw ArgumentError("split needs three fractions (train, val, test)");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ArgumentError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("split fractions must sum to 1");
  const std::size_t n = d.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train + n_val > n) throw ArgumentError("split fractions exceed the dataset size");
  const std::size_t n_test = n - n_train - n_val;
  if (n_train == 0 || n_val == 0 || n_test == 0) {
    throw DataError("empty split: sizes " + std::to_string(n_train) + "/" + std::to_string(n_val) + "/" +
                    std::to_string(n_test));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  Splits s;
  s.train_index.assign(perm.begin(), perm.begin() + n_train);
  s.val_index.assign(perm.begin() + n_train, perm.begin() + n_train + n_val);
  s.test_index.assign(perm.begin() + n_train + n_val, perm.end());
  s.raw_train = d.subset(s.train_index);
  s.raw_val = d.subset(s.val_index);
  s.raw_test = d.subset(s.test_index);
  s.standardizer = fit_standardizer(s.raw_train);
  s.train = standardize(s.raw_train, s.standardizer);
  s.val = standardize(s.raw_val, s.standardizer);
  s.test = standardize(s.raw_test, s.standardizer);
  return s;
}

}  // namespace gatewire
