#include "neurocam/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include <json.hpp>

#include "neurocam/array_io.hpp"

namespace neurocam {

namespace {

using cplx = std::complex<double>;

// expand polynomial from roots; coefficients returned highest order first
std::vector<cplx> poly_from_roots(const std::vector<cplx>& roots) {
  std::vector<cplx> coeffs{1.0};
  for (const cplx& r : roots) {
    std::vector<cplx> next(coeffs.size() + 1, 0.0);
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      next[i] += coeffs[i];
      next[i + 1] -= coeffs[i] * r;
    }
    coeffs = std::move(next);
  }
  return coeffs;
}

// direct form II transposed
std::vector<double> lfilter(const std::vector<double>& b, const std::vector<double>& a,
                            const std::vector<double>& x) {
  const std::size_t n = std::max(b.size(), a.size());
  std::vector<double> bb(b), aa(a);
  bb.resize(n, 0.0);
  aa.resize(n, 0.0);
  std::vector<double> z(n - 1, 0.0), y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = bb[0] * xi + (n > 1 ? z[0] : 0.0);
    for (std::size_t k = 0; k + 1 < n - 1; ++k) z[k] = bb[k + 1] * xi + z[k + 1] - aa[k + 1] * yi;
    if (n > 1) z[n - 2] = bb[n - 1] * xi - aa[n - 1] * yi;
    y[i] = yi;
  }
  return y;
}

}  // namespace

FilterSpec design_bandpass(double low_hz, double high_hz, double fs, int order) {
  if (!(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < fs / 2.0))
    throw std::invalid_argument("design_bandpass: require 0 < low < high < fs/2");
  if (order < 1) throw std::invalid_argument("design_bandpass: order must be >= 1");

  const double fs2 = 2.0 * fs;
  const double w1 = fs2 * std::tan(M_PI * low_hz / fs);
  const double w2 = fs2 * std::tan(M_PI * high_hz / fs);
  const double bw = w2 - w1;
  const double w0sq = w1 * w2;

  // analog Butterworth prototype poles on the left unit semicircle
  std::vector<cplx> analog_poles;
  for (int k = 0; k < order; ++k) {
    const double theta = M_PI * (2.0 * k + 1.0) / (2.0 * order) + M_PI / 2.0;
    const cplx p(std::cos(theta), std::sin(theta));
    // low-pass -> band-pass: each pole splits into a conjugate pair
    const cplx pb = p * (bw / 2.0);
    const cplx root = std::sqrt(pb * pb - w0sq);
    analog_poles.push_back(pb + root);
    analog_poles.push_back(pb - root);
  }
  // N analog zeros at s = 0 and N at infinity; analog gain bw^N

  // bilinear transform
  std::vector<cplx> zpoles, zzeros;
  cplx num_gain = std::pow(cplx(bw), order);  // analog gain
  for (const cplx& s : analog_poles) {
    zpoles.push_back((fs2 + s) / (fs2 - s));
    num_gain /= (fs2 - s);
  }
  for (int k = 0; k < order; ++k) {
    zzeros.push_back(1.0);   // from s = 0
    zzeros.push_back(-1.0);  // from s = infinity
    num_gain *= fs2;         // zero at 0: (fs2 - 0)
  }
  const double gain = num_gain.real();

  for (const cplx& p : zpoles)
    if (std::abs(p) >= 1.0)
      throw std::runtime_error("design_bandpass: unstable realization (pole outside unit circle)");

  const auto bc = poly_from_roots(zzeros);
  const auto ac = poly_from_roots(zpoles);
  FilterSpec spec;
  spec.low_cut = low_hz;
  spec.high_cut = high_hz;
  spec.order = order;
  spec.sampling_rate = fs;
  for (const cplx& c : bc) spec.b.push_back(c.real() * gain);
  for (const cplx& c : ac) spec.a.push_back(c.real());
  return spec;
}

std::complex<double> filter_response(const FilterSpec& spec, double freq_hz) {
  const double w = 2.0 * M_PI * freq_hz / spec.sampling_rate;
  const cplx z_inv = std::exp(cplx(0.0, -w));
  cplx num = 0.0, den = 0.0, zp = 1.0;
  for (std::size_t i = 0; i < std::max(spec.b.size(), spec.a.size()); ++i) {
    if (i < spec.b.size()) num += spec.b[i] * zp;
    if (i < spec.a.size()) den += spec.a[i] * zp;
    zp *= z_inv;
  }
  return num / den;
}

std::vector<double> filter_zero_phase(const FilterSpec& spec, const std::vector<double>& signal) {
  const std::size_t pad = static_cast<std::size_t>(3 * spec.order);
  if (signal.size() <= pad)
    throw std::invalid_argument("filter_zero_phase: signal too short for edge padding");

  std::vector<double> ext;
  ext.reserve(signal.size() + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal.front() - signal[pad - i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  const std::size_t n = signal.size();
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal.back() - signal[n - 2 - i]);

  std::vector<double> y = lfilter(spec.b, spec.a, ext);
  std::reverse(y.begin(), y.end());
  y = lfilter(spec.b, spec.a, y);
  std::reverse(y.begin(), y.end());
  return std::vector<double>(y.begin() + static_cast<std::ptrdiff_t>(pad),
                             y.begin() + static_cast<std::ptrdiff_t>(pad + n));
}

Recording filter_recording(const FilterSpec& spec, const Recording& rec) {
  Recording out = rec;
  for (std::size_t c = 0; c < rec.n_channels; ++c) {
    std::vector<double> row(rec.samples.begin() + static_cast<std::ptrdiff_t>(c * rec.n_samples),
                            rec.samples.begin() +
                                static_cast<std::ptrdiff_t>((c + 1) * rec.n_samples));
    row = filter_zero_phase(spec, row);
    std::copy(row.begin(), row.end(),
              out.samples.begin() + static_cast<std::ptrdiff_t>(c * rec.n_samples));
  }
  return out;
}

std::vector<Epoch> epoch_windows(const Trial& trial, const Recording& filtered,
                                 double window_seconds) {
  if (window_seconds <= 0) throw std::invalid_argument("epoch_windows: window must be positive");
  if (trial.onset_sample + trial.length_samples > filtered.n_samples)
    throw std::invalid_argument("epoch_windows: trial outside recording bounds");
  const std::size_t win =
      static_cast<std::size_t>(std::llround(window_seconds * filtered.sampling_rate));
  if (win == 0) throw std::invalid_argument("epoch_windows: window shorter than one sample");
  const std::size_t count = trial.length_samples / win;  // floor
  std::vector<Epoch> out;
  out.reserve(count);
  for (std::size_t w = 0; w < count; ++w) {
    Epoch ep;
    ep.label = trial.label;
    ep.provenance.subject = filtered.subject_id;
    ep.provenance.run = filtered.run_id;
    ep.provenance.window = static_cast<int>(w);
    ep.data.resize(filtered.n_channels * win);
    const std::size_t start = trial.onset_sample + w * win;
    for (std::size_t c = 0; c < filtered.n_channels; ++c)
      for (std::size_t t = 0; t < win; ++t) ep.data[c * win + t] = filtered.sample(c, start + t);
    out.push_back(std::move(ep));
  }
  return out;
}

void EpochSet::append(const Epoch& epoch) {
  if (epoch.data.size() != n_channels * n_times)
    throw std::invalid_argument("EpochSet::append: epoch size mismatch");
  data.insert(data.end(), epoch.data.begin(), epoch.data.end());
  labels.push_back(epoch.label);
  provenance.push_back(epoch.provenance);
  ++n_epochs;
}

EpochSet make_epoch_set(std::vector<std::string> channel_labels, double sampling_rate,
                        std::size_t n_times) {
  EpochSet set;
  set.n_channels = channel_labels.size();
  set.channel_labels = std::move(channel_labels);
  set.sampling_rate = sampling_rate;
  set.n_times = n_times;
  return set;
}

NormStats zscore_normalize(EpochSet& epochs, const std::optional<NormStats>& stats) {
  const std::size_t C = epochs.n_channels, T = epochs.n_times, E = epochs.n_epochs;
  NormStats out;
  if (stats) {
    if (stats->mean.size() != C)
      throw std::invalid_argument("zscore_normalize: channel count mismatch in stats");
    out = *stats;
  } else {
    out.mean.assign(C, 0.0);
    out.stddev.assign(C, 0.0);
    out.flat.assign(C, false);
    const double m = static_cast<double>(E * T);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = epochs.data.data() + (e * C + c) * T;
        for (std::size_t t = 0; t < T; ++t) out.mean[c] += row[t];
      }
    for (std::size_t c = 0; c < C; ++c) out.mean[c] /= m;
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t c = 0; c < C; ++c) {
        const double* row = epochs.data.data() + (e * C + c) * T;
        for (std::size_t t = 0; t < T; ++t) {
          const double d = row[t] - out.mean[c];
          out.stddev[c] += d * d;
        }
      }
    for (std::size_t c = 0; c < C; ++c) {
      out.stddev[c] = std::sqrt(out.stddev[c] / m);
      if (out.stddev[c] < 1e-12) {
        out.stddev[c] = 1.0;
        out.flat[c] = true;
      }
    }
  }
  for (std::size_t e = 0; e < E; ++e)
    for (std::size_t c = 0; c < C; ++c) {
      double* row = epochs.data.data() + (e * C + c) * T;
      const double mu = out.mean[c], inv = 1.0 / out.stddev[c];
      for (std::size_t t = 0; t < T; ++t) row[t] = (row[t] - mu) * inv;
    }
  return out;
}

TFR morlet_tfr(const std::vector<double>& signal, double fs, const std::vector<double>& freqs,
               const std::vector<double>& n_cycles, const std::string& channel) {
  if (freqs.size() != n_cycles.size())
    throw std::invalid_argument("morlet_tfr: freqs and n_cycles length mismatch");
  const std::size_t T = signal.size();
  TFR tfr;
  tfr.channel = channel;
  tfr.times.resize(T);
  for (std::size_t t = 0; t < T; ++t) tfr.times[t] = static_cast<double>(t) / fs;

  for (std::size_t fi = 0; fi < freqs.size(); ++fi) {
    const double f = freqs[fi];
    const double nc = n_cycles[fi];
    if (!(f > 0.0) || !(f < fs / 2.0))
      throw std::invalid_argument("morlet_tfr: frequency outside (0, fs/2)");
    if (!(nc > 0.0)) throw std::invalid_argument("morlet_tfr: n_cycles must be positive");
    const double sigma_t = nc / (2.0 * M_PI * f);
    const std::size_t half = static_cast<std::size_t>(std::floor(5.0 * sigma_t * fs));
    const std::size_t wlen = 2 * half + 1;
    if (wlen > T) {
      std::cerr << "morlet_tfr: skipping " << f << " Hz (wavelet longer than signal)\n";
      continue;
    }
    // L2-normalized complex Morlet
    std::vector<double> wr(wlen), wi(wlen);
    double norm = 0.0;
    for (std::size_t i = 0; i < wlen; ++i) {
      const double t = (static_cast<double>(i) - static_cast<double>(half)) / fs;
      const double env = std::exp(-t * t / (2.0 * sigma_t * sigma_t));
      wr[i] = env * std::cos(2.0 * M_PI * f * t);
      wi[i] = env * std::sin(2.0 * M_PI * f * t);
      norm += env * env;
    }
    norm = 1.0 / std::sqrt(norm);
    for (std::size_t i = 0; i < wlen; ++i) {
      wr[i] *= norm;
      wi[i] *= norm;
    }
    tfr.freqs.push_back(f);
    const std::size_t row = tfr.freqs.size() - 1;
    tfr.power.resize(tfr.freqs.size() * T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      double re = 0.0, im = 0.0;
      // 'same' convolution: wavelet centered on t, edges truncated
      const std::size_t lo = t >= half ? t - half : 0;
      const std::size_t hi = std::min(T - 1, t + half);
      for (std::size_t s = lo; s <= hi; ++s) {
        const std::size_t wi_idx = s + half - t;
        re += signal[s] * wr[wi_idx];
        im -= signal[s] * wi[wi_idx];
      }
      tfr.power[row * T + t] = re * re + im * im;
    }
  }
  return tfr;
}

void save_epochs(const std::string& base_path, const EpochSet& epochs) {
  save_array(base_path + ".bin", {epochs.n_epochs, epochs.n_channels, epochs.n_times},
             epochs.data);
  nlohmann::json side;
  side["sampling_rate"] = epochs.sampling_rate;
  side["channel_labels"] = epochs.channel_labels;
  side["labels"] = nlohmann::json::array();
  for (ClassLabel l : epochs.labels) side["labels"].push_back(to_string(l));
  side["provenance"] = nlohmann::json::array();
  for (const auto& p : epochs.provenance)
    side["provenance"].push_back(
        {{"subject", p.subject}, {"run", p.run}, {"trial", p.trial}, {"window", p.window}});
  std::ofstream os(base_path + ".json");
  if (!os) throw std::runtime_error("save_epochs: cannot open " + base_path + ".json");
  os << side.dump(2) << "\n";
}

EpochSet load_epochs(const std::string& base_path) {
  LoadedArray arr = load_array(base_path + ".bin");
  if (arr.shape.size() != 3) throw std::runtime_error("load_epochs: expected 3-D container");
  std::ifstream is(base_path + ".json");
  if (!is) throw std::runtime_error("load_epochs: cannot open " + base_path + ".json");
  nlohmann::json side = nlohmann::json::parse(is);

  EpochSet set;
  set.n_epochs = arr.shape[0];
  set.n_channels = arr.shape[1];
  set.n_times = arr.shape[2];
  set.data = std::move(arr.data);
  set.sampling_rate = side.at("sampling_rate").get<double>();
  set.channel_labels = side.at("channel_labels").get<std::vector<std::string>>();
  for (const auto& l : side.at("labels")) set.labels.push_back(class_from_string(l.get<std::string>()));
  for (const auto& p : side.at("provenance"))
    set.provenance.push_back({p.at("subject").get<int>(), p.at("run").get<int>(),
                              p.at("trial").get<int>(), p.at("window").get<int>()});
  if (set.labels.size() != set.n_epochs || set.provenance.size() != set.n_epochs)
    throw std::runtime_error("load_epochs: sidecar does not match container");
  return set;
}

}  // namespace neurocam
