//! Instantaneous MRC rates and the deterministic lower-bound rate model.
//!
//! Two parallel rate computations exist on purpose:
//!
//! * the *instantaneous* path takes a channel draw plus its MMSE estimates
//!   and evaluates the per-draw SINR, rate and power Jacobian (used by the
//!   stochastic optimizer and by Monte Carlo evaluation);
//! * the *deterministic* path depends only on large-scale statistics through
//!   the coefficients `rho`, `a`, `b`: it is the use-and-then-forget lower
//!   bound on the ergodic rate, and the objective of the WMMSE optimizer.
//!
//! Rates are in bits (base-2 logs) throughout.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::channel::{ChannelDraw, ChannelEstimate};
use crate::error::{Error, Result};
use crate::network::NetworkScenario;
use crate::pilots::{PilotBook, PilotGram};

const LN2: f64 = std::f64::consts::LN_2;

/// Transmit powers in watts, cell-major user order, each in `[0, P_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerVector(Vec<f64>);

impl PowerVector {
    /// Full power for every user.
    pub fn full(scenario: &NetworkScenario) -> Self {
        PowerVector(vec![scenario.pmax_watts(); scenario.num_users()])
    }

    pub fn zeros(n: usize) -> Self {
        PowerVector(vec![0.0; n])
    }

    pub fn new(values: Vec<f64>, pmax: f64) -> Result<Self> {
        if values.iter().any(|&p| !(0.0..=pmax * (1.0 + 1e-12)).contains(&p)) {
            return Err(Error::invalid(
                "powers",
                format!("entries must lie in [0, {pmax}] W"),
            ));
        }
        Ok(PowerVector(values))
    }

    /// No feasibility check; for internal iterates that are feasible by
    /// construction.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        PowerVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }
}

impl std::ops::Index<usize> for PowerVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Coefficients of the deterministic rate: for victim user g served by its
/// BS, `rho[g]` is the estimation quality, `a[g] = (M rho)^2` the coherent
/// signal gain, `b[(g, s)]` the average interference power coupling source
/// user s into victim g (its diagonal exceeds `a` by the self-scattering
/// term), and `noise_term[g] = M rho sigma^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct DetRateCoeffs {
    pub antennas: usize,
    pub noise: f64,
    pub rho: Vec<f64>,
    pub a: Vec<f64>,
    pub b: DMatrix<f64>,
    pub noise_term: Vec<f64>,
}

impl DetRateCoeffs {
    pub fn num_users(&self) -> usize {
        self.rho.len()
    }

    /// Total average receive term per victim: `T_g(p) = sum_s b[g,s] p_s +
    /// noise_term[g]`. The deterministic SINR is `a p_g / (T_g - a p_g)`.
    pub fn total_receive(&self, p: &PowerVector) -> Vec<f64> {
        let n = self.num_users();
        (0..n)
            .map(|g| {
                let mut t = self.noise_term[g];
                for s in 0..n {
                    t += self.b[(g, s)] * p[s];
                }
                t
            })
            .collect()
    }
}

/// Computes the deterministic rate coefficients from the pilot correlation
/// structure. The cross quadratic forms `phi_g^* U_i^{-1} phi_s` enter as
/// squared magnitudes, which keeps `b` real and nonnegative.
pub fn det_coeffs(book: &PilotBook, gram: &PilotGram, scenario: &NetworkScenario) -> DetRateCoeffs {
    let n = scenario.num_users();
    let m = scenario.antennas() as f64;
    let flat = book.flattened();
    let mut rho = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut noise_term = vec![0.0; n];
    let mut b = DMatrix::<f64>::zeros(n, n);

    for i in 0..scenario.num_cells() {
        // cross[g, s] = phi_g^* U_i^{-1} phi_s for all users g, s
        let cross = flat.adjoint() * gram.solved_all(i);
        for g in scenario.users_of_cell(i) {
            let v_own = scenario.gain(i, g);
            let r = v_own * v_own * cross[(g, g)].re;
            rho[g] = r;
            a[g] = (m * r) * (m * r);
            noise_term[g] = m * r * scenario.noise_power;
            for s in 0..n {
                let v_src = scenario.gain(i, s);
                let coherent = cross[(g, s)].norm_sqr();
                b[(g, s)] = m * r * v_src
                    + m * m * v_own * v_own * v_src * v_src * coherent;
            }
        }
    }

    DetRateCoeffs { antennas: scenario.antennas(), noise: scenario.noise_power, rho, a, b, noise_term }
}

/// Deterministic per-user rate in bits.
pub fn det_rate(p: &PowerVector, coeffs: &DetRateCoeffs) -> Vec<f64> {
    let t = coeffs.total_receive(p);
    (0..coeffs.num_users())
        .map(|g| {
            let den = t[g] - coeffs.a[g] * p[g];
            assert!(
                den > 0.0,
                "deterministic SINR denominator must stay positive (user {g}: {den})"
            );
            (1.0 + coeffs.a[g] * p[g] / den).log2()
        })
        .collect()
}

pub fn det_rate_weighted_sum(p: &PowerVector, coeffs: &DetRateCoeffs, weights: &[f64]) -> f64 {
    det_rate(p, coeffs).iter().zip(weights).map(|(r, w)| r * w).sum()
}

/// Analytic gradient of the weighted deterministic sum rate with respect to
/// every transmit power, in bits per watt.
pub fn det_rate_grad(p: &PowerVector, coeffs: &DetRateCoeffs, weights: &[f64]) -> Vec<f64> {
    let n = coeffs.num_users();
    let t = coeffs.total_receive(p);
    let mut grad = vec![0.0; n];
    for v in 0..n {
        let den = t[v] - coeffs.a[v] * p[v];
        debug_assert!(den > 0.0);
        let scale = weights[v] / LN2;
        for s in 0..n {
            let db = coeffs.b[(v, s)];
            let d_den = db - if s == v { coeffs.a[v] } else { 0.0 };
            grad[s] += scale * (db / t[v] - d_den / den);
        }
    }
    grad
}

/// Per-draw quantities entering the instantaneous SINR, precomputed once per
/// channel realization: for victim g, `sig[g] = ||hhat_g||^2`,
/// `cross_sq[(g, s)] = |hhat_g^* h_s|^2` at the victim's BS, and
/// `err_sq[g] = |hhat_g^* (h_g - hhat_g)|^2`.
#[derive(Clone, Debug)]
pub struct InstantRateContext {
    pub sig: Vec<f64>,
    pub cross_sq: DMatrix<f64>,
    pub err_sq: Vec<f64>,
    pub noise: f64,
    pub weights: Vec<f64>,
}

impl InstantRateContext {
    pub fn new(
        draw: &ChannelDraw,
        estimate: &ChannelEstimate,
        scenario: &NetworkScenario,
        weights: Vec<f64>,
    ) -> Self {
        let n = scenario.num_users();
        assert_eq!(weights.len(), n);
        let mut sig = vec![0.0; n];
        let mut err_sq = vec![0.0; n];
        let mut cross_sq = DMatrix::<f64>::zeros(n, n);
        for i in 0..scenario.num_cells() {
            let h_all = &draw.per_bs[i];
            for (k, g) in scenario.users_of_cell(i).enumerate() {
                let hhat = estimate.per_bs[i].column(k);
                let s = hhat.norm_squared();
                sig[g] = s;
                // w[s'] = h_{s'}^* hhat, so hhat^* h_{s'} = conj(w[s'])
                let w = h_all.adjoint() * hhat;
                for src in 0..n {
                    cross_sq[(g, src)] = w[src].norm_sqr();
                }
                let self_dot = w[g].conj();
                err_sq[g] = (self_dot - Complex64::from(s)).norm_sqr();
            }
        }
        InstantRateContext { sig, cross_sq, err_sq, noise: scenario.noise_power, weights }
    }

    pub fn num_users(&self) -> usize {
        self.sig.len()
    }

    /// Interference-plus-noise seen by victim g, including its own
    /// estimation-error self term.
    fn denominator(&self, p: &PowerVector, g: usize) -> f64 {
        let mut den = self.noise * self.sig[g] + self.err_sq[g] * p[g];
        for s in 0..self.num_users() {
            if s != g {
                den += self.cross_sq[(g, s)] * p[s];
            }
        }
        den
    }
}

/// Instantaneous MRC SINR per user; zero when the user transmits nothing or
/// its estimate degenerated to zero.
pub fn instant_sinr(p: &PowerVector, ctx: &InstantRateContext) -> Vec<f64> {
    (0..ctx.num_users())
        .map(|g| {
            let num = ctx.sig[g] * ctx.sig[g] * p[g];
            if num <= 0.0 {
                return 0.0;
            }
            num / ctx.denominator(p, g)
        })
        .collect()
}

/// Instantaneous rate `log2(1 + sinr)` per user, in bits.
pub fn instant_rate(p: &PowerVector, ctx: &InstantRateContext) -> Vec<f64> {
    instant_sinr(p, ctx).into_iter().map(|g| (1.0 + g).log2()).collect()
}

pub fn instant_rate_weighted_sum(p: &PowerVector, ctx: &InstantRateContext) -> f64 {
    instant_rate(p, ctx).iter().zip(&ctx.weights).map(|(r, w)| r * w).sum()
}

/// Full Jacobian of the instantaneous rates: entry `(v, s)` is the partial
/// derivative of victim v's rate with respect to source s's power, in bits
/// per watt. Off-diagonal entries are never positive (interference only
/// hurts); the diagonal combines the direct gain and the estimation-error
/// self term.
pub fn instant_rate_grad(p: &PowerVector, ctx: &InstantRateContext) -> DMatrix<f64> {
    let n = ctx.num_users();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for v in 0..n {
        let s_gain = ctx.sig[v] * ctx.sig[v];
        if s_gain <= 0.0 {
            continue;
        }
        let den = ctx.denominator(p, v);
        if den <= 0.0 {
            continue;
        }
        // 1/(ln2 (1+gamma) D^2) = 1/(ln2 D (D + S p_v))
        let common = 1.0 / (LN2 * den * (den + s_gain * p[v]));
        jac[(v, v)] = s_gain * (den - ctx.err_sq[v] * p[v]) * common;
        for s in 0..n {
            if s != v {
                jac[(v, s)] = -s_gain * p[v] * ctx.cross_sq[(v, s)] * common;
            }
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{mmse_estimate, perfect_estimate, pilot_phase_rx, sample_channel};
    use crate::network::{generate_scenario, ScenarioConfig};
    use crate::pilots::{make_pilots, pilot_gram, PilotKind};
    use crate::stream::stream_rng;
    use approx::assert_relative_eq;

    fn fixture(seed: u64) -> (NetworkScenario, PilotBook, PilotGram, DetRateCoeffs) {
        let mut cfg = ScenarioConfig::desk(seed);
        cfg.seed = seed;
        let s = generate_scenario(&cfg).unwrap();
        let b = make_pilots(PilotKind::RandomGaussian, 8, &s, seed, None).unwrap();
        let g = pilot_gram(&b, &s).unwrap();
        let c = det_coeffs(&b, &g, &s);
        (s, b, g, c)
    }

    fn context(s: &NetworkScenario, b: &PilotBook, g: &PilotGram, seed: u64) -> InstantRateContext {
        let draw = sample_channel(s, &mut stream_rng(seed, 0));
        let y = pilot_phase_rx(&draw, b, s, &mut stream_rng(seed, 1));
        let est = mmse_estimate(&y, b, g, s).unwrap();
        InstantRateContext::new(&draw, &est, s, vec![1.0; s.num_users()])
    }

    #[test]
    fn zero_power_means_zero_sinr_and_rate() {
        let (s, b, g, _) = fixture(1);
        let ctx = context(&s, &b, &g, 10);
        let p = PowerVector::zeros(s.num_users());
        assert!(instant_sinr(&p, &ctx).iter().all(|&x| x == 0.0));
        assert!(instant_rate(&p, &ctx).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rate_is_log2_of_one_plus_sinr() {
        assert_relative_eq!((1.0f64 + 1.0).log2(), 1.0);
        assert_relative_eq!((1.0f64 + 3.0).log2(), 2.0);
    }

    #[test]
    fn perfect_estimate_single_user_collapses_to_snr() {
        let mut cfg = ScenarioConfig::desk(2);
        cfg.num_cells = 1;
        cfg.users_per_cell = vec![1];
        cfg.antennas = 5;
        let s = generate_scenario(&cfg).unwrap();
        let draw = sample_channel(&s, &mut stream_rng(3, 0));
        let est = perfect_estimate(&draw, &s);
        let ctx = InstantRateContext::new(&draw, &est, &s, vec![1.0]);
        let p = PowerVector::full(&s);
        let h2 = draw.link(0, 0).norm_squared();
        let expect = h2 * p[0] / s.noise_power;
        assert_relative_eq!(instant_sinr(&p, &ctx)[0], expect, max_relative = 1e-12);
    }

    #[test]
    fn sinr_matches_bruteforce_scalar_evaluation() {
        let (s, b, g, _) = fixture(4);
        let draw = sample_channel(&s, &mut stream_rng(7, 0));
        let y = pilot_phase_rx(&draw, &b, &s, &mut stream_rng(7, 1));
        let est = mmse_estimate(&y, &b, &g, &s).unwrap();
        let ctx = InstantRateContext::new(&draw, &est, &s, vec![1.0; s.num_users()]);
        let mut powers = Vec::new();
        let mut rng = stream_rng(8, 0);
        for _ in 0..s.num_users() {
            powers.push(rand::Rng::gen_range(&mut rng, 0.0..s.pmax_watts()));
        }
        let p = PowerVector::new(powers, s.pmax_watts()).unwrap();
        let got = instant_sinr(&p, &ctx);

        for i in 0..s.num_cells() {
            for (k, gidx) in s.users_of_cell(i).enumerate() {
                let hhat = est.per_bs[i].column(k).into_owned();
                let num = hhat.norm_squared().powi(2) * p[gidx];
                let mut den = s.noise_power * hhat.norm_squared();
                for src in 0..s.num_users() {
                    if src != gidx {
                        den += hhat.dotc(&draw.per_bs[i].column(src)).norm_sqr() * p[src];
                    }
                }
                let diff = &draw.per_bs[i].column(gidx) - &hhat;
                den += hhat.dotc(&diff).norm_sqr() * p[gidx];
                assert_relative_eq!(got[gidx], num / den, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn coeff_identities_hold() {
        let (s, _, _, c) = fixture(5);
        let m = s.antennas() as f64;
        for g in 0..s.num_users() {
            assert!(c.rho[g] > 0.0);
            assert_relative_eq!(c.a[g], (m * c.rho[g]).powi(2), max_relative = 1e-14);
            let own_cell = s.user_cell[g];
            let v = s.gain(own_cell, g);
            assert_relative_eq!(
                c.b[(g, g)] - c.a[g],
                m * c.rho[g] * v,
                max_relative = 1e-10
            );
            for s2 in 0..s.num_users() {
                assert!(c.b[(g, s2)] >= 0.0);
            }
        }
    }

    #[test]
    fn single_user_rho_and_rate_reduce_to_closed_forms() {
        let mut cfg = ScenarioConfig::desk(6);
        cfg.num_cells = 1;
        cfg.users_per_cell = vec![1];
        cfg.antennas = 12;
        let s = generate_scenario(&cfg).unwrap();
        let b = make_pilots(PilotKind::RandomGaussian, 4, &s, 1, None).unwrap();
        let g = pilot_gram(&b, &s).unwrap();
        let c = det_coeffs(&b, &g, &s);
        let v = s.gain(0, 0);
        let e = b.column_energy();
        assert_relative_eq!(
            c.rho[0],
            v * v * e / (s.noise_power + v * e),
            max_relative = 1e-10
        );
        let p = PowerVector::full(&s);
        let m = s.antennas() as f64;
        let expect = (1.0 + m * c.rho[0] * p[0] / (v * p[0] + s.noise_power)).log2();
        assert_relative_eq!(det_rate(&p, &c)[0], expect, max_relative = 1e-10);
    }

    #[test]
    fn orthogonal_books_show_coherent_contamination_only_on_shared_pilots() {
        let s = generate_scenario(&ScenarioConfig::reference(7)).unwrap();
        let b = make_pilots(PilotKind::Orthogonal, 16, &s, 0, None).unwrap();
        let g = pilot_gram(&b, &s).unwrap();
        let c = det_coeffs(&b, &g, &s);
        let m = s.antennas() as f64;
        let victim = s.user_index(0, 3);
        let sharer = s.user_index(2, 3);
        let other = s.user_index(2, 4);
        // shared pilot: a strictly positive coherent term on top of M rho v
        let base_sharer = m * c.rho[victim] * s.gain(0, sharer);
        assert!(c.b[(victim, sharer)] > base_sharer * (1.0 + 1e-6));
        // different pilot: the coherent term vanishes
        let base_other = m * c.rho[victim] * s.gain(0, other);
        assert_relative_eq!(c.b[(victim, other)], base_other, max_relative = 1e-9);
    }

    #[test]
    fn det_rate_zero_at_zero_power() {
        let (s, _, _, c) = fixture(8);
        let p = PowerVector::zeros(s.num_users());
        assert!(det_rate(&p, &c).iter().all(|&r| r == 0.0));
    }

    #[test]
    fn det_rate_concave_along_own_power() {
        let (s, _, _, c) = fixture(9);
        let pmax = s.pmax_watts();
        let n = s.num_users();
        let steps = 64;
        for g in 0..n {
            let mut values = Vec::new();
            for t in 0..=steps {
                let mut powers = vec![0.37 * pmax; n];
                powers[g] = pmax * t as f64 / steps as f64;
                values.push(det_rate(&PowerVector::from_raw(powers), &c)[g]);
            }
            for w in values.windows(3) {
                let second = w[2] - 2.0 * w[1] + w[0];
                assert!(second <= 1e-9, "second difference {second} for user {g}");
            }
        }
    }

    #[test]
    fn det_grad_matches_finite_differences() {
        let (s, _, _, c) = fixture(10);
        let pmax = s.pmax_watts();
        let n = s.num_users();
        let mut rng = stream_rng(11, 0);
        let powers: Vec<f64> = (0..n).map(|_| rand::Rng::gen_range(&mut rng, 0.1..0.9) * pmax).collect();
        let p = PowerVector::from_raw(powers.clone());
        let w = vec![1.0; n];
        let grad = det_rate_grad(&p, &c, &w);
        let h = 1e-6 * pmax;
        for g in 0..n {
            let mut hi = powers.clone();
            let mut lo = powers.clone();
            hi[g] += h;
            lo[g] -= h;
            let fd = (det_rate_weighted_sum(&PowerVector::from_raw(hi), &c, &w)
                - det_rate_weighted_sum(&PowerVector::from_raw(lo), &c, &w))
                / (2.0 * h);
            assert_relative_eq!(grad[g], fd, max_relative = 1e-6, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_sign_structure() {
        let (s, b, g, _) = fixture(12);
        let ctx = context(&s, &b, &g, 13);
        let p = PowerVector::full(&s);
        let jac = instant_rate_grad(&p, &ctx);
        for v in 0..s.num_users() {
            for src in 0..s.num_users() {
                if v == src {
                    assert!(jac[(v, src)] >= 0.0);
                } else {
                    assert!(jac[(v, src)] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn rescaled_scenarios_give_identical_rates() {
        let mut cfg = ScenarioConfig::desk(14);
        cfg.normalize_noise = true;
        let s_norm = generate_scenario(&cfg).unwrap();
        cfg.normalize_noise = false;
        let s_raw = generate_scenario(&cfg).unwrap();
        {
            let (s1, s2) = (&s_norm, &s_raw);
            let b1 = make_pilots(PilotKind::RandomGaussian, 8, s1, 3, None).unwrap();
            let b2 = make_pilots(PilotKind::RandomGaussian, 8, s2, 3, None).unwrap();
            let g1 = pilot_gram(&b1, s1).unwrap();
            let g2 = pilot_gram(&b2, s2).unwrap();
            let c1 = det_coeffs(&b1, &g1, s1);
            let c2 = det_coeffs(&b2, &g2, s2);
            let p = PowerVector::full(s1);
            let r1 = det_rate(&p, &c1);
            let r2 = det_rate(&p, &c2);
            for (a, b) in r1.iter().zip(&r2) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
            // instantaneous path from identical fading streams
            let ctx1 = context(s1, &b1, &g1, 21);
            let ctx2 = context(s2, &b2, &g2, 21);
            let i1 = instant_rate(&p, &ctx1);
            let i2 = instant_rate(&p, &ctx2);
            for (a, b) in i1.iter().zip(&i2) {
                assert_relative_eq!(a, b, max_relative = 1e-9);
            }
        }
    }
}
