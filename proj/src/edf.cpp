#include "neurocam/edf.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>

namespace neurocam {

namespace {

constexpr std::size_t kFixedHeader = 256;
constexpr std::size_t kPerSignalHeader = 256;
constexpr double kDigMin = -32768.0;
constexpr double kDigMax = 32767.0;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n\0");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n\0");
  return s.substr(b, e - b + 1);
}

std::string field(const std::vector<std::uint8_t>& bytes, std::size_t off, std::size_t len) {
  if (off + len > bytes.size()) throw std::runtime_error("EDF: truncated header");
  return std::string(reinterpret_cast<const char*>(bytes.data() + off), len);
}

double parse_real(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw std::runtime_error("EDF: empty numeric field (" + what + ")");
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size())
    throw std::runtime_error("EDF: non-numeric field '" + s + "' (" + what + ")");
  return v;
}

long parse_int(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw std::runtime_error("EDF: empty numeric field (" + what + ")");
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size())
    throw std::runtime_error("EDF: non-integer field '" + s + "' (" + what + ")");
  return v;
}

// Formats a real into an 8-char EDF header field and returns the value that a
// reader will decode, so writers can quantize against the stored value.
std::string format_header_real(double v, double* stored) {
  for (int prec = 7; prec >= 1; --prec) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strlen(buf) <= 8) {
      if (stored) *stored = std::strtod(buf, nullptr);
      return buf;
    }
  }
  throw std::runtime_error("EDF: value does not fit an 8-character header field");
}

void put_field(std::vector<std::uint8_t>& out, const std::string& s, std::size_t len) {
  if (s.size() > len) throw std::runtime_error("EDF: header field overflow: '" + s + "'");
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(i < s.size() ? static_cast<std::uint8_t>(s[i]) : ' ');
}

struct TalEvent {
  double onset;
  double duration;
  std::string text;
};

// Parses the timekeeping/annotation byte stream of one record.
std::vector<TalEvent> parse_tals(const std::uint8_t* data, std::size_t len) {
  std::vector<TalEvent> events;
  std::size_t i = 0;
  while (i < len && data[i] != 0) {
    // one TAL: onset [0x15 duration] 0x14 (text 0x14)* 0x00
    std::size_t j = i;
    while (j < len && data[j] != 0x14 && data[j] != 0) ++j;
    if (j >= len || data[j] != 0x14) break;
    std::string head(reinterpret_cast<const char*>(data + i), j - i);
    double onset = 0.0, duration = 0.0;
    const std::size_t dsep = head.find('\x15');
    try {
      if (dsep == std::string::npos) {
        onset = parse_real(head, "TAL onset");
      } else {
        onset = parse_real(head.substr(0, dsep), "TAL onset");
        duration = parse_real(head.substr(dsep + 1), "TAL duration");
      }
    } catch (const std::exception&) {
      // tolerate malformed TAL heads: skip to terminator
      while (j < len && data[j] != 0) ++j;
      i = j + 1;
      continue;
    }
    ++j;  // past 0x14
    while (j < len && data[j] != 0) {
      std::size_t k = j;
      while (k < len && data[k] != 0x14 && data[k] != 0) ++k;
      std::string text(reinterpret_cast<const char*>(data + j), k - j);
      if (!text.empty()) events.push_back({onset, duration, text});
      if (k < len && data[k] == 0x14) ++k;
      j = k;
    }
    i = j + 1;  // past 0x00
  }
  return events;
}

}  // namespace

Recording parse_edf(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFixedHeader) throw std::runtime_error("EDF: file shorter than fixed header");
  if (trim(field(bytes, 0, 8)) != "0") throw std::runtime_error("EDF: unsupported version field");

  Recording rec;
  const std::string patient = trim(field(bytes, 8, 80));
  {
    int sid = 0, rid = 0;
    if (std::sscanf(patient.c_str(), "subject %d run %d", &sid, &rid) == 2) {
      rec.subject_id = sid;
      rec.run_id = rid;
    }
  }
  const long header_bytes = parse_int(field(bytes, 184, 8), "header bytes");
  long n_records = parse_int(field(bytes, 236, 8), "record count");
  const double record_duration = parse_real(field(bytes, 244, 8), "record duration");
  const long ns = parse_int(field(bytes, 252, 4), "signal count");
  if (ns < 0 || ns > 4096) throw std::runtime_error("EDF: implausible signal count");
  const std::size_t expect_header = kFixedHeader + static_cast<std::size_t>(ns) * kPerSignalHeader;
  if (static_cast<std::size_t>(header_bytes) != expect_header)
    throw std::runtime_error("EDF: header byte count does not match signal count");
  if (bytes.size() < expect_header) throw std::runtime_error("EDF: truncated signal headers");

  const std::size_t nsz = static_cast<std::size_t>(ns);
  std::vector<std::string> labels(nsz);
  std::vector<double> pmin(nsz), pmax(nsz), dmin(nsz), dmax(nsz);
  std::vector<long> spr(nsz);
  std::vector<bool> is_annot(nsz);
  // per-signal layout: label16 transducer80 dim8 pmin8 pmax8 dmin8 dmax8 prefilter80 spr8 reserved32
  for (std::size_t s = 0; s < nsz; ++s) {
    labels[s] = trim(field(bytes, kFixedHeader + 16 * s, 16));
    is_annot[s] = labels[s] == "EDF Annotations";
    std::size_t off = kFixedHeader + 16 * nsz + 80 * nsz;  // past labels+transducers
    pmin[s] = parse_real(field(bytes, off + 8 * nsz + 8 * s, 8), "physical min");
    pmax[s] = parse_real(field(bytes, off + 16 * nsz + 8 * s, 8), "physical max");
    dmin[s] = parse_real(field(bytes, off + 24 * nsz + 8 * s, 8), "digital min");
    dmax[s] = parse_real(field(bytes, off + 32 * nsz + 8 * s, 8), "digital max");
    spr[s] = parse_int(field(bytes, off + 40 * nsz + 80 * nsz + 8 * s, 8), "samples per record");
    if (spr[s] < 0) throw std::runtime_error("EDF: negative samples-per-record");
    if (!is_annot[s] && dmax[s] == dmin[s])
      throw std::runtime_error("EDF: digital min equals digital max");
  }

  std::size_t record_size = 0;
  for (std::size_t s = 0; s < nsz; ++s) record_size += static_cast<std::size_t>(spr[s]) * 2;
  const std::size_t payload = bytes.size() - expect_header;
  if (n_records < 0) {
    if (record_size == 0 || payload % record_size != 0)
      throw std::runtime_error("EDF: cannot infer record count from file size");
    n_records = static_cast<long>(payload / record_size);
  }
  if (payload != static_cast<std::size_t>(n_records) * record_size)
    throw std::runtime_error("EDF: declared size does not match actual data length");

  std::vector<std::size_t> data_signals;
  for (std::size_t s = 0; s < nsz; ++s)
    if (!is_annot[s]) data_signals.push_back(s);

  // uniform sampling rate across ordinary signals
  rec.sampling_rate = 0.0;
  if (!data_signals.empty()) {
    if (record_duration <= 0.0)
      throw std::runtime_error("EDF: non-positive record duration with ordinary signals");
    const long spr0 = spr[data_signals[0]];
    for (std::size_t s : data_signals)
      if (spr[s] != spr0) throw std::runtime_error("EDF: mixed per-signal sampling rates");
    rec.sampling_rate = static_cast<double>(spr0) / record_duration;
  }

  rec.n_channels = data_signals.size();
  const std::size_t spr_data = rec.n_channels ? static_cast<std::size_t>(spr[data_signals[0]]) : 0;
  rec.n_samples = spr_data * static_cast<std::size_t>(n_records);
  rec.channel_labels.reserve(rec.n_channels);
  for (std::size_t s : data_signals) rec.channel_labels.push_back(labels[s]);
  rec.samples.assign(rec.n_channels * rec.n_samples, 0.0);

  std::vector<std::size_t> sig_offset(nsz, 0);
  {
    std::size_t off = 0;
    for (std::size_t s = 0; s < nsz; ++s) {
      sig_offset[s] = off;
      off += static_cast<std::size_t>(spr[s]) * 2;
    }
  }
  for (long r = 0; r < n_records; ++r) {
    const std::size_t rec_base = expect_header + static_cast<std::size_t>(r) * record_size;
    for (std::size_t ci = 0; ci < data_signals.size(); ++ci) {
      const std::size_t s = data_signals[ci];
      const double gain = (pmax[s] - pmin[s]) / (dmax[s] - dmin[s]);
      const std::uint8_t* p = bytes.data() + rec_base + sig_offset[s];
      double* dst = rec.samples.data() + ci * rec.n_samples + static_cast<std::size_t>(r) * spr_data;
      for (std::size_t i = 0; i < spr_data; ++i) {
        const std::int16_t d = static_cast<std::int16_t>(
            static_cast<std::uint16_t>(p[2 * i]) | (static_cast<std::uint16_t>(p[2 * i + 1]) << 8));
        dst[i] = (static_cast<double>(d) - dmin[s]) * gain + pmin[s];
      }
    }
    for (std::size_t s = 0; s < nsz; ++s) {
      if (!is_annot[s]) continue;
      const std::uint8_t* p = bytes.data() + rec_base + sig_offset[s];
      for (const TalEvent& ev : parse_tals(p, static_cast<std::size_t>(spr[s]) * 2))
        rec.annotations.push_back({ev.onset, ev.duration, ev.text});
    }
  }
  std::stable_sort(rec.annotations.begin(), rec.annotations.end(),
                   [](const Annotation& a, const Annotation& b) { return a.onset_s < b.onset_s; });
  return rec;
}

Recording load_edf_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                  std::istreambuf_iterator<char>());
  Recording rec = parse_edf(bytes);
  if (rec.subject_id == 0) {
    // infer from SxxxRyy.edf
    std::size_t slash = path.find_last_of("/\\");
    std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
    int sid = 0, rid = 0;
    if (std::sscanf(name.c_str(), "S%dR%d", &sid, &rid) == 2) {
      rec.subject_id = sid;
      rec.run_id = rid;
    }
  }
  return rec;
}

std::vector<std::uint8_t> serialize_edf(const Recording& rec) {
  for (const auto& label : rec.channel_labels)
    if (label.size() > 16)
      throw std::runtime_error("EDF: channel label longer than 16 bytes: " + label);
  if (rec.channel_labels.size() != rec.n_channels)
    throw std::runtime_error("EDF: channel label count mismatch");
  for (double v : rec.samples)
    if (!std::isfinite(v)) throw std::runtime_error("EDF: non-finite sample value");

  // record layout
  std::size_t spr_data = 0;
  long n_records = 0;
  double duration = 1.0;
  if (rec.n_samples > 0) {
    const double fs = rec.sampling_rate;
    if (fs <= 0) throw std::runtime_error("EDF: sampling rate must be positive");
    const long ifs = std::lround(fs);
    if (std::abs(fs - static_cast<double>(ifs)) < 1e-9 && ifs > 0 &&
        rec.n_samples % static_cast<std::size_t>(ifs) == 0) {
      spr_data = static_cast<std::size_t>(ifs);
      duration = 1.0;
      n_records = static_cast<long>(rec.n_samples / spr_data);
    } else {
      spr_data = rec.n_samples;
      duration = static_cast<double>(rec.n_samples) / fs;
      n_records = 1;
    }
  } else if (!rec.annotations.empty()) {
    n_records = 1;
    duration = 1.0;
  }

  const bool with_annot = !rec.annotations.empty();
  const std::size_t ns = rec.n_channels + (with_annot ? 1 : 0);

  // per-channel scaling against the 8-char header representation
  std::vector<std::string> pmin_str(rec.n_channels), pmax_str(rec.n_channels);
  std::vector<double> pmin(rec.n_channels), pmax(rec.n_channels);
  for (std::size_t c = 0; c < rec.n_channels; ++c) {
    double lo = 0.0, hi = 0.0;
    if (rec.n_samples > 0) {
      lo = hi = rec.sample(c, 0);
      for (std::size_t t = 1; t < rec.n_samples; ++t) {
        lo = std::min(lo, rec.sample(c, t));
        hi = std::max(hi, rec.sample(c, t));
      }
    }
    if (hi <= lo) hi = lo + 1.0;  // flat channel: any gain maps back exactly
    pmin_str[c] = format_header_real(lo, &pmin[c]);
    pmax_str[c] = format_header_real(hi, &pmax[c]);
    if (pmin[c] >= pmax[c]) {  // collapse caused by 8-char rounding
      pmax[c] = pmin[c] + 1.0;
      pmax_str[c] = format_header_real(pmax[c], &pmax[c]);
    }
  }

  // annotation payload per record
  std::vector<std::string> tal_blocks(static_cast<std::size_t>(std::max(n_records, 0L)));
  std::size_t spr_annot = 0;
  if (with_annot) {
    for (long r = 0; r < n_records; ++r) {
      char head[64];
      std::snprintf(head, sizeof(head), "+%.10g", static_cast<double>(r) * duration);
      std::string block = std::string(head) + '\x14' + '\x14' + '\0';
      for (const Annotation& a : rec.annotations) {
        const long target = rec.n_samples > 0 && duration > 0
                                ? std::min<long>(n_records - 1,
                                                 static_cast<long>(a.onset_s / duration))
                                : 0;
        if (target != r) continue;
        char buf[128];
        std::snprintf(buf, sizeof(buf), "+%.10g\x15%.10g", a.onset_s, a.duration_s);
        block += buf;
        block += '\x14';
        block += a.label;
        block += '\x14';
        block += '\0';
      }
      tal_blocks[static_cast<std::size_t>(r)] = block;
      spr_annot = std::max(spr_annot, (block.size() + 1) / 2);
    }
    spr_annot = std::max<std::size_t>(spr_annot, 8);
  }

  std::vector<std::uint8_t> out;
  out.reserve(kFixedHeader + ns * kPerSignalHeader +
              static_cast<std::size_t>(std::max(n_records, 0L)) *
                  (rec.n_channels * spr_data + spr_annot) * 2);
  put_field(out, "0", 8);
  {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "subject %d run %d", rec.subject_id, rec.run_id);
    put_field(out, buf, 80);
  }
  put_field(out, "neurocam export", 80);
  put_field(out, "01.01.00", 8);
  put_field(out, "00.00.00", 8);
  put_field(out, std::to_string(kFixedHeader + ns * kPerSignalHeader), 8);
  put_field(out, with_annot ? "EDF+C" : "", 44);
  put_field(out, std::to_string(n_records), 8);
  put_field(out, format_header_real(duration, nullptr), 8);
  put_field(out, std::to_string(ns), 4);

  // signal headers, field by field across all signals
  for (std::size_t c = 0; c < rec.n_channels; ++c) put_field(out, rec.channel_labels[c], 16);
  if (with_annot) put_field(out, "EDF Annotations", 16);
  for (std::size_t s = 0; s < ns; ++s) put_field(out, "", 80);  // transducer
  for (std::size_t c = 0; c < rec.n_channels; ++c) put_field(out, "uV", 8);
  if (with_annot) put_field(out, "", 8);
  for (std::size_t c = 0; c < rec.n_channels; ++c) put_field(out, pmin_str[c], 8);
  if (with_annot) put_field(out, "-1", 8);
  for (std::size_t c = 0; c < rec.n_channels; ++c) put_field(out, pmax_str[c], 8);
  if (with_annot) put_field(out, "1", 8);
  for (std::size_t s = 0; s < ns; ++s) put_field(out, "-32768", 8);
  for (std::size_t s = 0; s < ns; ++s) put_field(out, "32767", 8);
  for (std::size_t s = 0; s < ns; ++s) put_field(out, "", 80);  // prefiltering
  for (std::size_t c = 0; c < rec.n_channels; ++c) put_field(out, std::to_string(spr_data), 8);
  if (with_annot) put_field(out, std::to_string(spr_annot), 8);
  for (std::size_t s = 0; s < ns; ++s) put_field(out, "", 32);

  // data records
  for (long r = 0; r < n_records; ++r) {
    for (std::size_t c = 0; c < rec.n_channels; ++c) {
      const double gain = (pmax[c] - pmin[c]) / (kDigMax - kDigMin);
      for (std::size_t i = 0; i < spr_data; ++i) {
        const double v = rec.sample(c, static_cast<std::size_t>(r) * spr_data + i);
        double d = std::round((v - pmin[c]) / gain + kDigMin);
        d = std::clamp(d, kDigMin, kDigMax);
        const std::int16_t di = static_cast<std::int16_t>(d);
        out.push_back(static_cast<std::uint8_t>(di & 0xff));
        out.push_back(static_cast<std::uint8_t>((di >> 8) & 0xff));
      }
    }
    if (with_annot) {
      const std::string& block = tal_blocks[static_cast<std::size_t>(r)];
      for (std::size_t i = 0; i < spr_annot * 2; ++i)
        out.push_back(i < block.size() ? static_cast<std::uint8_t>(block[i]) : 0);
    }
  }
  return out;
}

std::vector<Trial> extract_trials(const Recording& rec) {
  std::vector<Trial> trials;
  if (rec.sampling_rate <= 0) throw std::runtime_error("extract_trials: unknown sampling rate");
  for (const Annotation& a : rec.annotations) {
    ClassLabel label;
    if (a.label == "T1") {
      label = ClassLabel::Left;
    } else if (a.label == "T2") {
      label = ClassLabel::Right;
    } else if (a.label == "T0") {
      continue;  // rest
    } else {
      std::cerr << "extract_trials: ignoring annotation label '" << a.label << "'\n";
      continue;
    }
    Trial t;
    t.onset_sample = static_cast<std::size_t>(std::llround(a.onset_s * rec.sampling_rate));
    t.length_samples = static_cast<std::size_t>(std::llround(a.duration_s * rec.sampling_rate));
    t.label = label;
    if (t.onset_sample >= rec.n_samples) continue;
    if (t.onset_sample + t.length_samples > rec.n_samples) {
      t.length_samples = rec.n_samples - t.onset_sample;
      t.truncated = true;
    }
    trials.push_back(t);
  }
  return trials;
}

ValidationReport validate_recording(const Recording& rec) {
  ValidationReport report;
  if (std::abs(rec.sampling_rate - 160.0) > 1e-6)
    report.issues.push_back(
        {"sampling_rate", "expected 160 Hz, found " + std::to_string(rec.sampling_rate)});
  if (rec.n_channels != 64)
    report.issues.push_back(
        {"channel_count", "expected 64 channels, found " + std::to_string(rec.n_channels)});
  for (std::size_t c = 0; c < rec.n_channels; ++c) {
    for (std::size_t t = 0; t < rec.n_samples; ++t) {
      if (!std::isfinite(rec.sample(c, t))) {
        report.issues.push_back({"nan_sample", "non-finite sample in channel " + std::to_string(c) +
                                                   " at index " + std::to_string(t)});
        break;  // one issue per channel is enough
      }
    }
  }
  if (rec.annotations.empty()) report.issues.push_back({"no_annotations", "no annotations present"});
  return report;
}

}  // namespace neurocam
