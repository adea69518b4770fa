#include "messfn/metrics.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "messfn/resample.h"
#include "messfn/wald.h"

namespace messfn::metrics {

namespace {

void require_same_geometry(const RasterImage& a, const RasterImage& b, const char* what) {
  if (!a.same_geometry(b)) {
    throw MetricError(std::string(what) + ": geometry mismatch " + std::to_string(a.bands) + "x" +
                      std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                      std::to_string(b.bands) + "x" + std::to_string(b.height) + "x" +
                      std::to_string(b.width));
  }
  if (a.data.empty()) throw MetricError(std::string(what) + ": empty image");
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

struct Quat {
  double w = 0, x = 0, y = 0, z = 0;

  Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
  Quat operator-(const Quat& o) const { return {w - o.w, x - o.x, y - o.y, z - o.z}; }
  Quat operator*(double s) const { return {w * s, x * s, y * s, z * s}; }
  Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
  }
  Quat conj() const { return {w, -x, -y, -z}; }
  double norm2() const { return w * w + x * x + y * y + z * z; }
};

// 4 |cov| |ma| |mb| / ((va + vb)(|ma|^2 + |mb|^2)) with the degenerate
// factors taken as their limits.
double quality(double cov_abs, double va, double vb, double ma2, double mb2) {
  const double spread = va + vb, level = ma2 + mb2;
  const double mean_term = level > 0.0 ? 2.0 * std::sqrt(ma2 * mb2) / level : 1.0;
  const double contrast_term = spread > 0.0 ? 2.0 * cov_abs / spread : 1.0;
  return contrast_term * mean_term;
}

void require_block(std::size_t height, std::size_t width, std::size_t block, const char* what) {
  if (block == 0 || height < block || width < block) {
    throw MetricError(std::string(what) + ": image " + std::to_string(height) + "x" +
                      std::to_string(width) + " is smaller than the " + std::to_string(block) +
                      "-pixel block");
  }
}

std::vector<double> ssim_window() {
  const auto taps = gaussian_taps(1.5, kSsimWindow / 2);
  return taps;
}

// Valid-mode separable correlation of a plane with a symmetric kernel.
std::vector<double> filter_valid(std::span<const double> src, std::size_t h, std::size_t w,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * src[y * w + x + t];
      rows[y * ow + x] = acc;
    }
  }
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t t = 0; t < k; ++t) acc += taps[t] * rows[(y + t) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t h,
                  std::size_t w, double dynamic_range) {
  const auto taps = ssim_window();
  const double c1 = std::pow(0.01 * dynamic_range, 2), c2 = std::pow(0.03 * dynamic_range, 2);
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, taps), mu_b = filter_valid(b, h, w, taps);
  const auto e_aa = filter_valid(aa, h, w, taps), e_bb = filter_valid(bb, h, w, taps);
  const auto e_ab = filter_valid(ab, h, w, taps);
  double acc = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    acc += (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

// Kahan's angle between two vectors: 2 atan2(|u - v|, |u + v|) on unit vectors.
double angle(const double* a, const double* b, std::size_t n, bool* degenerate) {
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  *degenerate = !(na > 0.0) || !(nb > 0.0);
  if (*degenerate) return 0.0;
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  double diff = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = a[i] / na, v = b[i] / nb;
    diff += (u - v) * (u - v);
    sum += (u + v) * (u + v);
  }
  return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

std::vector<double> spectrum(const RasterImage& img, std::size_t y, std::size_t x) {
  std::vector<double> v(img.bands);
  for (std::size_t b = 0; b < img.bands; ++b) v[b] = img.at(b, y, x);
  return v;
}

std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

double psnr(const RasterImage& fused, const RasterImage& ref, double peak) {
  require_same_geometry(fused, ref, "psnr");
  if (!(peak > 0.0)) throw MetricError("psnr: peak must be positive");
  double acc = 0.0;
  for (std::size_t b = 0; b < ref.bands; ++b) {
    const auto f = fused.band(b), r = ref.band(b);
    double se = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) se += (f[i] - r[i]) * (f[i] - r[i]);
    const double mse = se / static_cast<double>(f.size());
    acc += mse > 0.0 ? std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)) : kPsnrCap;
  }
  return acc / static_cast<double>(ref.bands);
}

double ssim(const RasterImage& fused, const RasterImage& ref, double dynamic_range) {
  require_same_geometry(fused, ref, "ssim");
  require_block(ref.height, ref.width, kSsimWindow, "ssim");
  double acc = 0.0;
  for (std::size_t b = 0; b < ref.bands; ++b) {
    acc += ssim_plane(fused.band(b), ref.band(b), ref.height, ref.width, dynamic_range);
  }
  return acc / static_cast<double>(ref.bands);
}

double sam(const RasterImage& fused, const RasterImage& ref, std::size_t* skipped) {
  require_same_geometry(fused, ref, "sam");
  double acc = 0.0;
  std::size_t used = 0, zero = 0;
  for (std::size_t y = 0; y < ref.height; ++y) {
    for (std::size_t x = 0; x < ref.width; ++x) {
      const auto f = spectrum(fused, y, x), r = spectrum(ref, y, x);
      bool degenerate = false;
      const double a = angle(f.data(), r.data(), f.size(), &degenerate);
      if (degenerate) {
        ++zero;
      } else {
        acc += a;
        ++used;
      }
    }
  }
  if (skipped) *skipped = zero;
  if (used == 0) throw MetricError("sam: every pixel has a zero spectral vector");
  return acc / static_cast<double>(used);
}

double ergas(const RasterImage& fused, const RasterImage& ref, double ratio) {
  require_same_geometry(fused, ref, "ergas");
  double acc = 0.0;
  for (std::size_t b = 0; b < ref.bands; ++b) {
    const auto f = fused.band(b), r = ref.band(b);
    const double mu = mean_of(r);
    if (mu == 0.0) throw MetricError("ergas: reference band " + std::to_string(b) + " has zero mean");
    double se = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) se += (f[i] - r[i]) * (f[i] - r[i]);
    acc += se / static_cast<double>(f.size()) / (mu * mu);
  }
  return 100.0 * ratio * std::sqrt(acc / static_cast<double>(ref.bands));
}

namespace {

double pearson(std::span<const double> a, std::span<const double> b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw MetricError("cc: band has zero variance");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double cc(const RasterImage& fused, const RasterImage& ref) {
  require_same_geometry(fused, ref, "cc");
  double acc = 0.0;
  for (std::size_t b = 0; b < ref.bands; ++b) acc += pearson(fused.band(b), ref.band(b));
  return acc / static_cast<double>(ref.bands);
}

double q_index(std::span<const double> a, std::span<const double> b, std::size_t height,
               std::size_t width, std::size_t block) {
  require_block(height, width, block, "q-index");
  const double n = static_cast<double>(block * block);
  double acc = 0.0;
  std::size_t tiles = 0;
  for (std::size_t y0 = 0; y0 + block <= height; y0 += block) {
    for (std::size_t x0 = 0; x0 + block <= width; x0 += block) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t y = y0; y < y0 + block; ++y) {
        for (std::size_t x = x0; x < x0 + block; ++x) {
          ma += a[y * width + x];
          mb += b[y * width + x];
        }
      }
      ma /= n;
      mb /= n;
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t y = y0; y < y0 + block; ++y) {
        for (std::size_t x = x0; x < x0 + block; ++x) {
          const double da = a[y * width + x] - ma, db = b[y * width + x] - mb;
          va += da * da;
          vb += db * db;
          cov += da * db;
        }
      }
      // The signed covariance keeps anticorrelated tiles negative.
      const double q = quality(std::abs(cov / n), va / n, vb / n, ma * ma, mb * mb);
      acc += cov < 0.0 ? -q : q;
      ++tiles;
    }
  }
  return acc / static_cast<double>(tiles);
}

double q4(const RasterImage& fused, const RasterImage& ref, std::size_t block) {
  require_same_geometry(fused, ref, "q4");
  if (ref.bands != 4) throw MetricError("q4: expects 4 bands, got " + std::to_string(ref.bands));
  require_block(ref.height, ref.width, block, "q4");
  const std::size_t w = ref.width;
  const double n = static_cast<double>(block * block);
  auto quat = [&](const RasterImage& img, std::size_t y, std::size_t x) {
    return Quat{img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), img.at(3, y, x)};
  };
  double acc = 0.0;
  std::size_t tiles = 0;
  for (std::size_t y0 = 0; y0 + block <= ref.height; y0 += block) {
    for (std::size_t x0 = 0; x0 + block <= w; x0 += block) {
      Quat mr, mf;
      for (std::size_t y = y0; y < y0 + block; ++y) {
        for (std::size_t x = x0; x < x0 + block; ++x) {
          mr = mr + quat(ref, y, x);
          mf = mf + quat(fused, y, x);
        }
      }
      mr = mr * (1.0 / n);
      mf = mf * (1.0 / n);
      double vr = 0.0, vf = 0.0;
      Quat cov;
      for (std::size_t y = y0; y < y0 + block; ++y) {
        for (std::size_t x = x0; x < x0 + block; ++x) {
          const Quat dr = quat(ref, y, x) - mr, df = quat(fused, y, x) - mf;
          vr += dr.norm2();
          vf += df.norm2();
          cov = cov + dr * df.conj();
        }
      }
      cov = cov * (1.0 / n);
      acc += quality(std::sqrt(cov.norm2()), vr / n, vf / n, mr.norm2(), mf.norm2());
      ++tiles;
    }
  }
  return acc / static_cast<double>(tiles);
}

QnrResult qnr_suite(const RasterImage& fused, const RasterImage& ms_orig, const RasterImage& pan,
                    std::size_t r, std::size_t block) {
  if (r == 0 || block % r != 0) {
    throw MetricError("qnr: block " + std::to_string(block) + " must be a multiple of r=" +
                      std::to_string(r));
  }
  if (pan.bands != 1 || fused.bands != ms_orig.bands || fused.bands < 2 ||
      fused.height != pan.height || fused.width != pan.width ||
      fused.height != r * ms_orig.height || fused.width != r * ms_orig.width) {
    throw MetricError("qnr: inconsistent geometry (fused " + std::to_string(fused.height) + "x" +
                      std::to_string(fused.width) + ", MS " + std::to_string(ms_orig.height) +
                      "x" + std::to_string(ms_orig.width) + ", PAN " +
                      std::to_string(pan.height) + "x" + std::to_string(pan.width) +
                      ", r=" + std::to_string(r) + ")");
  }
  const std::size_t lo_block = block / r;
  const std::size_t nb = fused.bands;
  QnrResult out;
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < nb; ++i) {
    for (std::size_t j = i + 1; j < nb; ++j) {
      const double qf = q_index(fused.band(i), fused.band(j), fused.height, fused.width, block);
      const double qm =
          q_index(ms_orig.band(i), ms_orig.band(j), ms_orig.height, ms_orig.width, lo_block);
      acc += std::abs(qf - qm);
      ++pairs;
    }
  }
  out.d_lambda = acc / static_cast<double>(pairs);

  const RasterImage pan_lr = wald::degrade(pan, r);
  acc = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const double qf = q_index(fused.band(b), pan.band(0), fused.height, fused.width, block);
    const double qm =
        q_index(ms_orig.band(b), pan_lr.band(0), ms_orig.height, ms_orig.width, lo_block);
    acc += std::abs(qf - qm);
  }
  out.d_s = acc / static_cast<double>(nb);
  out.qnr = (1.0 - out.d_lambda) * (1.0 - out.d_s);
  return out;
}

RasterImage sam_map(const RasterImage& fused, const RasterImage& ref) {
  require_same_geometry(fused, ref, "sam_map");
  RasterImage out(1, ref.height, ref.width);
  out.domain = raster::Domain::unit;
  for (std::size_t y = 0; y < ref.height; ++y) {
    for (std::size_t x = 0; x < ref.width; ++x) {
      const auto f = spectrum(fused, y, x), r = spectrum(ref, y, x);
      bool degenerate = false;
      out.at(0, y, x) = angle(f.data(), r.data(), f.size(), &degenerate);
    }
  }
  return out;
}

RasterImage gradient_map(const RasterImage& img) {
  RasterImage out(1, img.height, img.width);
  out.domain = raster::Domain::unit;
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  for (std::size_t b = 0; b < img.bands; ++b) {
    auto px = [&](long y, long x) {
      y = std::clamp(y, 0L, h - 1);
      x = std::clamp(x, 0L, w - 1);
      return img.at(b, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
    };
    for (long y = 0; y < h; ++y) {
      for (long x = 0; x < w; ++x) {
        const double gx = (px(y - 1, x + 1) - px(y - 1, x - 1)) +
                          2 * (px(y, x + 1) - px(y, x - 1)) +
                          (px(y + 1, x + 1) - px(y + 1, x - 1));
        const double gy = (px(y + 1, x - 1) - px(y - 1, x - 1)) +
                          2 * (px(y + 1, x) - px(y - 1, x)) +
                          (px(y + 1, x + 1) - px(y - 1, x + 1));
        out.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) +=
            std::hypot(gx, gy) / static_cast<double>(img.bands);
      }
    }
  }
  return out;
}

RasterImage diff_map(const RasterImage& a, const RasterImage& b) {
  require_same_geometry(a, b, "diff_map");
  RasterImage out(a.bands, a.height, a.width);
  out.domain = raster::Domain::unit;
  out.band_names = a.band_names;
  for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::abs(a.data[i] - b.data[i]);
  return out;
}

RasterImage to_positive(const RasterImage& img) {
  RasterImage out = raster::to_unit(img);
  for (auto& v : out.data) v = 0.5 * (v + 1.0);
  return out;
}

std::map<std::string, double> MetricReport::values() const {
  std::map<std::string, double> out;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) out[key] = *v;
  };
  put("psnr_db", psnr_db);
  put("ssim", ssim);
  put("sam_rad", sam_rad);
  put("ergas", ergas);
  put("cc", cc);
  put("q4", q4);
  put("d_lambda", d_lambda);
  put("d_s", d_s);
  put("qnr", qnr);
  return out;
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  for (const auto& [key, v] : values()) os << key << " = " << format_value(v) << '\n';
  for (const auto& [key, bands] : per_band) {
    for (std::size_t b = 0; b < bands.size(); ++b) {
      os << key << ".band" << b << " = " << format_value(bands[b]) << '\n';
    }
  }
  return os.str();
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [key, v] : values()) j[key] = v;
  if (!per_band.empty()) {
    auto& pb = j["per_band"];
    for (const auto& [key, bands] : per_band) pb[key] = bands;
  }
  return j.dump(2) + "\n";
}

std::set<std::string> parse_selection(const std::string& text) {
  if (text.empty() || text == "all") return reference_metric_names();
  std::set<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!reference_metric_names().count(item)) {
      throw std::invalid_argument("unknown metric '" + item +
                                  "' (expected psnr, ssim, sam, ergas, cc or q4)");
    }
    out.insert(item);
  }
  return out;
}

MetricReport reference_report(const RasterImage& fused, const RasterImage& ref, std::size_t r,
                              const std::set<std::string>& selection) {
  require_same_geometry(fused, ref, "reference metrics");
  const RasterImage f = to_positive(fused), g = to_positive(ref);
  MetricReport rep;
  auto band_of = [](const RasterImage& img, std::size_t b) { return img.extract_band(b); };
  if (selection.count("psnr")) {
    rep.psnr_db = psnr(f, g, 1.0);
    auto& pb = rep.per_band["psnr_db"];
    for (std::size_t b = 0; b < g.bands; ++b) pb.push_back(psnr(band_of(f, b), band_of(g, b), 1.0));
  }
  if (selection.count("ssim")) {
    rep.ssim = ssim(f, g, 1.0);
    auto& pb = rep.per_band["ssim"];
    for (std::size_t b = 0; b < g.bands; ++b) pb.push_back(ssim(band_of(f, b), band_of(g, b), 1.0));
  }
  if (selection.count("sam")) rep.sam_rad = sam(f, g);
  if (selection.count("ergas")) rep.ergas = ergas(f, g, 1.0 / static_cast<double>(r));
  if (selection.count("cc")) {
    rep.cc = cc(f, g);
    auto& pb = rep.per_band["cc"];
    for (std::size_t b = 0; b < g.bands; ++b) pb.push_back(cc(band_of(f, b), band_of(g, b)));
  }
  if (selection.count("q4")) rep.q4 = q4(f, g);
  return rep;
}

MetricReport no_reference_report(const RasterImage& fused, const RasterImage& ms_orig,
                                 const RasterImage& pan, std::size_t r) {
  const auto res = qnr_suite(to_positive(fused), to_positive(ms_orig), to_positive(pan), r);
  MetricReport rep;
  rep.d_lambda = res.d_lambda;
  rep.d_s = res.d_s;
  rep.qnr = res.qnr;
  return rep;
}

MetricReport average(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw MetricError("cannot average an empty set of reports");
  MetricReport out;
  const double n = static_cast<double>(reports.size());
  auto avg = [&](std::optional<double> MetricReport::*field) {
    double acc = 0.0;
    for (const auto& rep : reports) {
      if (!(rep.*field)) return;
      acc += *(rep.*field);
    }
    out.*field = acc / n;
  };
  for (auto field : {&MetricReport::psnr_db, &MetricReport::ssim, &MetricReport::sam_rad,
                     &MetricReport::ergas, &MetricReport::cc, &MetricReport::q4,
                     &MetricReport::d_lambda, &MetricReport::d_s, &MetricReport::qnr}) {
    avg(field);
  }
  for (const auto& [key, bands] : reports.front().per_band) {
    std::vector<double> acc(bands.size(), 0.0);
    for (const auto& rep : reports) {
      const auto it = rep.per_band.find(key);
      if (it == rep.per_band.end() || it->second.size() != acc.size()) {
        throw MetricError("cannot average reports with different per-band entries");
      }
      for (std::size_t b = 0; b < acc.size(); ++b) acc[b] += it->second[b];
    }
    for (auto& v : acc) v /= n;
    out.per_band[key] = std::move(acc);
  }
  return out;
}

}  // namespace messfn::metrics
