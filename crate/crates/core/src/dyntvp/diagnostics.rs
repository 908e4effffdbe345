//! Split-R̂ and multi-chain effective sample size.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

/// Split-R̂: each chain is halved and the potential scale reduction is
/// computed over the halves. Returns 1 for a parameter that is constant
/// across all draws, NaN when there are fewer than 4 draws per chain.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return f64::NAN;
    }
    let half = n / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        parts.push(&c[..half]);
        parts.push(&c[n - half..n]);
    }
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = mean(&parts.iter().map(|p| var(p)).collect::<Vec<_>>());
    let b = half as f64 * var(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (half as f64 - 1.0) / half as f64 * w + b / half as f64;
    (var_plus / w).sqrt()
}

/// Biased autocovariance at lags `0..n`, via zero-padded FFT.
fn autocov(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size with Geyer's initial monotone sequence over the
/// combined-chain autocorrelation.
pub fn ess(chains: &[&[f64]]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocov(c, &mut planner)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let w = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = w * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += var(&chain_means);
    }
    if var_plus == 0.0 {
        return (m * n) as f64;
    }
    let acov_mean = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let rho = |t: usize| 1.0 - (w - acov_mean(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 2 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    // enforce a monotone sequence of pair sums
    let mut t = 1;
    while t + 3 <= max_t {
        let prev = rho_hat[t - 1] + rho_hat[t];
        if rho_hat[t + 1] + rho_hat[t + 2] > prev {
            rho_hat[t + 1] = prev / 2.0;
            rho_hat[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let upto = (max_t + 1).min(n - 1);
    let tau = -1.0 + 2.0 * rho_hat[..=upto].iter().sum::<f64>();
    let total = (m * n) as f64;
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        let s = (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = phi * x + s * e;
                x
            })
            .collect()
    }

    #[test]
    fn white_noise_is_mixed() {
        let a = ar1(0.0, 2000, 1);
        let b = ar1(0.0, 2000, 2);
        let r = split_rhat(&[&a, &b]);
        assert!((r - 1.0).abs() < 0.01, "rhat {r}");
        let e = ess(&[&a, &b]);
        assert!((e / 4000.0 - 1.0).abs() < 0.2, "ess {e}");
    }

    #[test]
    fn ar1_ess_matches_integrated_time() {
        // tau = (1 + phi) / (1 - phi) for AR(1)
        let phi = 0.9;
        let chains: Vec<Vec<f64>> = (0..4).map(|s| ar1(phi, 20000, 10 + s)).collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let want = 80000.0 * (1.0 - phi) / (1.0 + phi);
        let got = ess(&refs);
        assert!((got / want - 1.0).abs() < 0.25, "ess {got} want {want}");
    }

    #[test]
    fn shifted_chains_flagged() {
        let a = ar1(0.0, 500, 3);
        let b: Vec<f64> = ar1(0.0, 500, 4).iter().map(|v| v + 2.0).collect();
        assert!(split_rhat(&[&a, &b]) > 1.1);
    }

    #[test]
    fn constant_draws() {
        let a = vec![0.5; 100];
        assert_eq!(split_rhat(&[&a, &a]), 1.0);
        assert_eq!(ess(&[&a, &a]), 200.0);
    }
}
