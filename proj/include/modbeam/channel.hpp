#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modbeam/linalg.hpp"
#include "modbeam/rng.hpp"

namespace modbeam {

/// Transmit-side power and noise parameters (linear scale).
struct SystemParams {
  double rho_s = 1.0;     // per-symbol power
  double sigma_w2 = 1.0;  // noise variance

  SystemParams() = default;
  SystemParams(double rho, double sigma2) : rho_s(rho), sigma_w2(sigma2) {
    if (!(rho_s > 0.0) || !(sigma_w2 > 0.0))
      throw std::invalid_argument("SystemParams: rho_s and sigma_w2 must be positive");
  }

  double snr() const { return rho_s / sigma_w2; }

  /// rho_s = 1, sigma_w2 = 10^(-snr_db/10); the SNR convention is 1/sigma_w2.
  static SystemParams from_snr_db(double snr_db) {
    return SystemParams(1.0, std::pow(10.0, -snr_db / 10.0));
  }
};

/// One multi-band channel draw: B matrices of size M x K.
struct ChannelRealization {
  std::vector<ComplexMatrix> per_bin;  // indexed by frequency bin b

  std::size_t bins() const { return per_bin.size(); }
  std::size_t antennas() const { return per_bin.empty() ? 0 : per_bin.front().rows(); }
  std::size_t users() const { return per_bin.empty() ? 0 : per_bin.front().cols(); }
};

struct ChannelDataset {
  std::vector<ChannelRealization> samples;
  std::uint64_t seed = 0;
  std::string model_tag;

  std::size_t size() const { return samples.size(); }

  void validate() const {
    if (samples.empty()) return;
    const std::size_t b = samples.front().bins();
    const std::size_t m = samples.front().antennas();
    const std::size_t k = samples.front().users();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].bins() != b)
        throw std::invalid_argument("ChannelDataset: sample " + std::to_string(i) +
                                    " has mismatched bin count");
      for (std::size_t bb = 0; bb < samples[i].bins(); ++bb) {
        const auto& h = samples[i].per_bin[bb];
        if (h.rows() != m || h.cols() != k)
          throw std::invalid_argument("ChannelDataset: sample " + std::to_string(i) +
                                      " bin " + std::to_string(bb) +
                                      " has mismatched dimensions");
      }
    }
  }
};

/// i.i.d. circularly-symmetric complex Gaussian entries with unit variance
/// per complex entry. Generation is sequential so a seed pins the dataset.
inline ChannelDataset generate_rayleigh(std::size_t m, std::size_t k, std::size_t b,
                                        std::size_t n, std::uint64_t seed) {
  if (m < 1 || k < 1 || b < 1 || n < 1)
    throw std::invalid_argument("generate_rayleigh: all dimensions must be >= 1");
  ChannelDataset d;
  d.seed = seed;
  d.model_tag = "rayleigh-iid";
  d.samples.resize(n);
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    d.samples[i].per_bin.reserve(b);
    for (std::size_t bb = 0; bb < b; ++bb) {
      ComplexMatrix h(m, k);
      for (std::size_t e = 0; e < h.size(); ++e) h.data()[e] = rng.cnormal();
      d.samples[i].per_bin.push_back(std::move(h));
    }
  }
  return d;
}

/// Returns H + E with E i.i.d. zero-mean complex Gaussian of per-entry
/// variance sigma_E2, drawn from a per-sample stream derived from the seed.
inline ChannelDataset perturb_csi(const ChannelDataset& d, double sigma_e2,
                                  std::uint64_t seed) {
  if (sigma_e2 < 0.0) throw std::invalid_argument("perturb_csi: negative variance");
  ChannelDataset out = d;
  out.model_tag = d.model_tag + "+csi-noise";
  if (sigma_e2 == 0.0) return out;
  const double amp = std::sqrt(sigma_e2);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    Rng rng(Rng::derive(seed, i));
    for (auto& h : out.samples[i].per_bin)
      for (std::size_t e = 0; e < h.size(); ++e) h.data()[e] += amp * rng.cnormal();
  }
  return out;
}

inline ChannelRealization perturb_csi(const ChannelRealization& h, double sigma_e2,
                                      std::uint64_t seed) {
  if (sigma_e2 < 0.0) throw std::invalid_argument("perturb_csi: negative variance");
  ChannelRealization out = h;
  if (sigma_e2 == 0.0) return out;
  const double amp = std::sqrt(sigma_e2);
  Rng rng(seed);
  for (auto& hb : out.per_bin)
    for (std::size_t e = 0; e < hb.size(); ++e) hb.data()[e] += amp * rng.cnormal();
  return out;
}

namespace detail {

inline nlohmann::json dataset_to_json(const ChannelDataset& d) {
  d.validate();
  nlohmann::json j;
  const std::size_t n = d.size();
  j["M"] = n ? d.samples.front().antennas() : 0;
  j["K"] = n ? d.samples.front().users() : 0;
  j["B"] = n ? d.samples.front().bins() : 0;
  j["n"] = n;
  j["seed"] = d.seed;
  j["model_tag"] = d.model_tag;
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : d.samples) {
    nlohmann::json bins = nlohmann::json::array();
    for (const auto& h : s.per_bin) {
      nlohmann::json entries = nlohmann::json::array();
      for (std::size_t e = 0; e < h.size(); ++e)
        entries.push_back({h.data()[e].real(), h.data()[e].imag()});
      bins.push_back(std::move(entries));
    }
    samples.push_back(std::move(bins));
  }
  j["samples"] = std::move(samples);
  return j;
}

inline ChannelDataset dataset_from_json(const nlohmann::json& j) {
  for (const char* field : {"M", "K", "B", "n", "seed", "model_tag", "samples"})
    if (!j.contains(field))
      throw std::invalid_argument(std::string("dataset: missing field '") + field + "'");
  const std::size_t m = j.at("M").get<std::size_t>();
  const std::size_t k = j.at("K").get<std::size_t>();
  const std::size_t b = j.at("B").get<std::size_t>();
  const std::size_t n = j.at("n").get<std::size_t>();
  ChannelDataset d;
  d.seed = j.at("seed").get<std::uint64_t>();
  d.model_tag = j.at("model_tag").get<std::string>();
  const auto& samples = j.at("samples");
  if (!samples.is_array() || samples.size() != n)
    throw std::invalid_argument("dataset: field 'samples' must be an array of length n");
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& bins = samples.at(i);
    if (!bins.is_array() || bins.size() != b)
      throw std::invalid_argument("dataset: sample " + std::to_string(i) +
                                  " must hold B=" + std::to_string(b) + " matrices");
    for (std::size_t bb = 0; bb < b; ++bb) {
      const auto& entries = bins.at(bb);
      if (!entries.is_array() || entries.size() != m * k)
        throw std::invalid_argument("dataset: sample " + std::to_string(i) + " bin " +
                                    std::to_string(bb) + " must hold M*K=" +
                                    std::to_string(m * k) + " entries");
      ComplexMatrix h(m, k);
      for (std::size_t e = 0; e < m * k; ++e) {
        const auto& pair = entries.at(e);
        if (!pair.is_array() || pair.size() != 2)
          throw std::invalid_argument("dataset: sample " + std::to_string(i) + " bin " +
                                      std::to_string(bb) + " entry " + std::to_string(e) +
                                      " must be a [re, im] pair");
        h.data()[e] = cplx{pair.at(0).get<double>(), pair.at(1).get<double>()};
      }
      d.samples[i].per_bin.push_back(std::move(h));
    }
  }
  d.validate();
  return d;
}

}  // namespace detail

/// Writes the `.chjson` dataset format; load_dataset is its exact inverse.
inline void save_dataset(const ChannelDataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open '" + path + "'");
  out << detail::dataset_to_json(d).dump();
  out << '\n';
  if (!out) throw std::runtime_error("save_dataset: write failed for '" + path + "'");
}

inline ChannelDataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("load_dataset: malformed JSON in '" + path + "': " + e.what());
  }
  return detail::dataset_from_json(j);
}

struct DatasetSplit {
  ChannelDataset train, val, test;
};

/// Deterministic split by sample index: first n_train, then n_val, then n_test.
inline DatasetSplit split_dataset(const ChannelDataset& d, std::size_t n_train,
                                  std::size_t n_val, std::size_t n_test) {
  if (n_train + n_val + n_test > d.size())
    throw std::invalid_argument("split_dataset: split sizes exceed dataset size");
  DatasetSplit s;
  auto take = [&](std::size_t begin, std::size_t count) {
    ChannelDataset part;
    part.seed = d.seed;
    part.model_tag = d.model_tag;
    part.samples.assign(d.samples.begin() + begin, d.samples.begin() + begin + count);
    return part;
  };
  s.train = take(0, n_train);
  s.val = take(n_train, n_val);
  s.test = take(n_train + n_val, n_test);
  return s;
}

/// The default 80/10/10 split by index.
inline DatasetSplit split_80_10_10(const ChannelDataset& d) {
  const std::size_t n = d.size();
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  return split_dataset(d, n_train, n_val, n - n_train - n_val);
}

}  // namespace modbeam
