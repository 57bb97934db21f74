#pragma once

#include <complex>
#include <span>
#include <vector>

#include "nlfs/field.hpp"
#include "nlfs/multiindex.hpp"

namespace nlfs {

/// Derivative backend. `spectral` is the model's native exact derivative;
/// `central2` is a second-order periodic finite difference kept only for
/// cross-checks of the spectral path.
enum class DerivScheme { spectral, central2 };

/// Signed integer frequency of a node along one axis: k for k < N/2,
/// k - N otherwise. The Nyquist index maps to -N/2.
int signed_freq(const GridSpec& grid, int node, int axis);
/// Physical frequency vector xi = (2 pi / L) * signed integer frequencies.
std::array<double, 2> frequency(const GridSpec& grid, int node);

/// |xi|^power per node, zero at the zero mode (also when power <= 0).
std::vector<double> frac_symbol(const GridSpec& grid, double power);
/// <xi>^power = (1 + |xi|^2)^(power/2) per node.
std::vector<double> bessel_symbol(const GridSpec& grid, double power);
/// (i xi)^sigma per node; Nyquist lines are zeroed whenever any sigma_j with
/// an odd entry touches them, so real inputs map to real outputs.
std::vector<std::complex<double>> derivative_symbol(const GridSpec& grid,
                                                    const MultiIndex& sigma);

/// Applies a Fourier multiplier: inverse FFT of symbol * FFT(u), projected
/// back to real values. Throws InternalError if the imaginary residue
/// exceeds 1e-10 * ||u||_inf (symbol not conjugate-symmetric, or a bug).
Field apply_symbol(const Field& u, std::span<const std::complex<double>> symbol);
Field apply_symbol(const Field& u, std::span<const double> symbol);

/// Fractional Laplacian (-Delta)^s as the multiplier |xi|^{2s}; the mean
/// mode is annihilated. Requires s > 0.
Field frac_laplacian(const Field& u, double s);

/// D^sigma u. Spectral scheme uses (i xi)^sigma; central2 applies the
/// periodic 3-point first-difference sigma_j times per axis.
Field partial_derivative(const Field& u, const MultiIndex& sigma,
                         DerivScheme scheme = DerivScheme::spectral);

/// Discrete Sobolev norm of order a:
/// sqrt( (L/N)^dim * (1/N^dim) * sum_k <xi_k>^{2a} |u_hat_k|^2 ),
/// normalized so that a = 0 reproduces the L2 quadrature norm exactly.
double sobolev_norm(const Field& u, double a);

}  // namespace nlfs
