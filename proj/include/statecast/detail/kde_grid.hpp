#pragma once

#include <Eigen/Dense>
#include <fftw3.h>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>

#include "statecast/density.hpp"

namespace statecast::detail {

// Fast evaluation path for weighted Gaussian KDEs at scale: linear binning of
// the weighted sample followed by an FFT convolution with the kernel, then
// interpolation of the log-density at query points. Queries the grid cannot
// answer reliably (outside the padded range, or where the convolved density
// sits below the FFT noise floor) fall back to the exact stable sum, so the
// evaluator degrades to exact answers instead of wrong ones.
//
// Resolution is tied to the bandwidth (grid step <= h/32), which keeps the
// combined binning + interpolation error a few 1e-4 in log-density. That is
// far below the statistical noise the EM operates under; all contractual
// density operations elsewhere use exact summation.

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan inverse = nullptr;
};

// FFTW plan creation is not thread-safe and moderately expensive; plans are
// cached per transform size and reused via new-array execution on aligned
// buffers.
inline const FftPlans& fft_plans_for(int size) {
    static std::mutex mutex;
    static std::map<int, FftPlans> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(size);
    if (it != cache.end()) return it->second;

    double* real = fftw_alloc_real(static_cast<std::size_t>(size));
    fftw_complex* freq = fftw_alloc_complex(static_cast<std::size_t>(size / 2 + 1));
    FftPlans plans;
    plans.forward = fftw_plan_dft_r2c_1d(size, real, freq, FFTW_ESTIMATE);
    plans.inverse = fftw_plan_dft_c2r_1d(size, freq, real, FFTW_ESTIMATE);
    fftw_free(real);
    fftw_free(freq);
    return cache.emplace(size, plans).first->second;
}

struct FftwRealDeleter {
    void operator()(double* p) const { fftw_free(p); }
};
struct FftwComplexDeleter {
    void operator()(fftw_complex* p) const { fftw_free(p); }
};

class WkdeGridEvaluator {
public:
    WkdeGridEvaluator(const Eigen::Ref<const Eigen::VectorXd>& values,
                      const Eigen::Ref<const Eigen::VectorXd>& weights, double bandwidth)
        : values_(values), weights_(weights), h_(bandwidth), total_weight_(weights.sum()) {
        build_grid();
    }

    double log_pdf(double x) const {
        if (!usable_ || x < lo_ || x > hi_) return exact_log_pdf(x);
        const double u = (x - lo_) * inv_dx_;
        Eigen::Index i = static_cast<Eigen::Index>(u);
        if (i >= grid_points_ - 1) i = grid_points_ - 2;
        const double a = u - static_cast<double>(i);
        const double l0 = log_density_(i);
        const double l1 = log_density_(i + 1);
        if (!std::isfinite(l0) || !std::isfinite(l1)) return exact_log_pdf(x);
        return l0 + a * (l1 - l0);
    }

    double pdf(double x) const { return std::exp(log_pdf(x)); }

    // Exact stable log-sum over all kernels; shared fallback path.
    double exact_log_pdf(double x) const {
        Eigen::ArrayXd arg = ((values_.array() - x) / h_).square() * -0.5;
        const double m = arg.maxCoeff();
        if (!std::isfinite(m)) return -std::numeric_limits<double>::infinity();
        const double s = ((arg - m).exp() * weights_.array()).sum();
        if (s <= 0.0) return -std::numeric_limits<double>::infinity();
        return m + std::log(s) - std::log(total_weight_ * h_ * std::sqrt(2.0 * M_PI));
    }

    bool grid_active() const { return usable_; }

private:
    void build_grid() {
        const double vmin = values_.minCoeff();
        const double vmax = values_.maxCoeff();
        const double pad = 12.0 * h_;
        lo_ = vmin - pad;
        hi_ = vmax + pad;
        const double target_dx = h_ / 32.0;
        double needed = (hi_ - lo_) / target_dx + 1.0;
        int g = 2048;
        while (g < needed && g < (1 << 18)) g <<= 1;
        grid_points_ = g;
        dx_ = (hi_ - lo_) / static_cast<double>(g - 1);
        inv_dx_ = 1.0 / dx_;
        if (dx_ > h_ / 4.0) {
            usable_ = false;  // grid cannot resolve the kernel; stay exact
            return;
        }

        std::unique_ptr<double[], FftwRealDeleter> real(
            fftw_alloc_real(static_cast<std::size_t>(g)));
        std::unique_ptr<fftw_complex[], FftwComplexDeleter> freq(
            fftw_alloc_complex(static_cast<std::size_t>(g / 2 + 1)));

        // Linear binning of the weighted sample.
        std::fill(real.get(), real.get() + g, 0.0);
        for (Eigen::Index r = 0; r < values_.size(); ++r) {
            const double u = (values_(r) - lo_) * inv_dx_;
            const Eigen::Index i = static_cast<Eigen::Index>(u);
            const double frac = u - static_cast<double>(i);
            real[i] += weights_(r) * (1.0 - frac);
            real[i + 1] += weights_(r) * frac;
        }

        const FftPlans& plans = fft_plans_for(g);
        fftw_execute_dft_r2c(plans.forward, real.get(), freq.get());

        // Multiply by the kernel transform. The Gaussian's continuous Fourier
        // transform sampled at the DFT frequencies is exact here up to an
        // aliasing term below 1e-300 at dx <= h/4.
        const double omega_step = 2.0 * M_PI / (static_cast<double>(g) * dx_);
        for (int k = 0; k <= g / 2; ++k) {
            const double omega = omega_step * k;
            const double gain = std::exp(-0.5 * h_ * h_ * omega * omega) / dx_;
            freq[k][0] *= gain;
            freq[k][1] *= gain;
        }
        fftw_execute_dft_c2r(plans.inverse, freq.get(), real.get());

        // The c2r transform is unnormalized (factor g) and the kernel gain
        // already carries the 1/dx sampling factor.
        Eigen::Map<Eigen::ArrayXd> density(real.get(), g);
        density *= 1.0 / (total_weight_ * static_cast<double>(g));

        // Below this floor the convolution output is FFT rounding noise, not
        // signal; such queries are recomputed exactly.
        const double floor = density.maxCoeff() * 1e-13;
        log_density_.resize(g);
        for (int i = 0; i < g; ++i) {
            log_density_(i) = real[i] > floor ? std::log(real[i])
                                              : -std::numeric_limits<double>::infinity();
        }
        usable_ = true;
    }

    Eigen::Ref<const Eigen::VectorXd> values_;
    Eigen::Ref<const Eigen::VectorXd> weights_;
    double h_;
    double total_weight_;
    double lo_ = 0.0, hi_ = 0.0, dx_ = 0.0, inv_dx_ = 0.0;
    Eigen::Index grid_points_ = 0;
    Eigen::VectorXd log_density_;
    bool usable_ = false;
};

}  // namespace statecast::detail
