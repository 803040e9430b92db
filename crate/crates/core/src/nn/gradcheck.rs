//! Finite-difference verification of the hand-written backward pass.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::{init_weights, loss, loss_and_grad, NetworkSpec, NetworkWeights};

/// Denominator floor for the relative error, guarding near-zero gradients.
const FLOOR: f64 = 1e-2;

/// A probe interval counts as smooth when the symmetric second difference
/// stays below this fraction of the measured slope (or below the noise
/// floor, whichever is larger). Across an activation flip the second
/// difference equals the contamination of the central estimate, so this
/// fraction bounds the accepted relative error from undetected flips.
/// Benign curvature also trips it, but that only costs a descent: the
/// curvature-to-slope ratio halves with the step while a flip keeps it
/// constant until the interval clears the flip entirely.
const SMOOTH: f64 = 2e-3;

/// Probe step divisors tried in order until an interval certifies smooth.
/// Deeper levels would push single-precision probes into loss rounding
/// noise, so a flip that survives them triggers the side fallback.
const LEVELS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// One-sided estimates must agree across step halvings this closely
/// (relative to the slope scale, with an absolute allowance for benign
/// curvature and the rounding bias that one-sided quotients inherit from
/// the shared origin loss) before a side counts as flip-free.
const SIDE_REL: f64 = 5e-3;
const SIDE_ABS: f64 = 6e-4;

/// Redraws of the probe configuration before giving up on flip avoidance.
const ATTEMPTS: u32 = 4;

/// Compares every analytic gradient component against a finite difference
/// on a random batch and returns the worst relative discrepancy
/// `|a - n| / max(|a|, |n|, 1e-2)`. Deterministic in `(spec, seed)`.
///
/// The base step is `machine_epsilon^(1/3) / 8` for the instantiated
/// scalar type. The classic `eps^(1/3)` optimum assumes a smooth loss;
/// relu and maxpool give the loss dense fine structure along any single
/// weight, and an interval wide enough to span several activation flips
/// averages their slopes instead of measuring the derivative. One octave
/// down the flips become rare, while the paired evaluations still cancel
/// most rounding error. Instantiate with `f64` for the high-precision
/// verification mode.
///
/// A central difference only estimates the derivative where the loss is
/// smooth across the whole probe interval, and a component whose interval
/// straddles an activation flip reports a discrepancy of the size of the
/// slope jump no matter how correct the backward pass is. Every interval
/// is therefore certified smooth before use: the symmetric second
/// difference `loss(+h) - 2 loss(0) + loss(-h)` is O(h^2) on smooth
/// stretches but equals the contamination itself across a flip. The
/// certificate cannot be sharper than the rounding noise of the loss, so
/// its absolute floor is calibrated per draw from the median second
/// difference at the finest probe step, which genuine curvature has
/// already left and flips are far too rare to move.
/// Uncertified intervals shrink until the flip falls outside; a flip that
/// survives the finest step sits so close that one side of the weight
/// must be clean, and the fallback picks the side whose one-sided
/// estimates stay consistent across step halvings. If neither side is
/// consistent, the whole check redraws batch and initialization from the
/// next substream and starts over. All of these decisions use loss values
/// only, never the analytic gradient, so a wrong backward pass cannot
/// hide behind them: it stays numerically smooth and is compared on every
/// component of whichever draw settles.
pub fn grad_check<T: Real>(spec: &NetworkSpec, seed: u64) -> Result<f64> {
    let mut outcome = Outcome { worst: f64::INFINITY, contested: usize::MAX };
    for attempt in 0..ATTEMPTS {
        outcome = check_attempt::<T>(spec, seed, attempt)?;
        if outcome.contested == 0 {
            break;
        }
    }
    Ok(outcome.worst)
}

struct Outcome {
    worst: f64,
    /// Components with activation flips too close on both sides for any
    /// finite-difference estimate to survive.
    contested: usize,
}

fn check_attempt<T: Real>(spec: &NetworkSpec, seed: u64, attempt: u32) -> Result<Outcome> {
    let attempt_seed = if attempt == 0 {
        seed
    } else {
        crate::rng::derive_seed(seed, &format!("gradcheck-attempt-{attempt}"))
    };
    let (c, h, w) = spec.input_shape;
    let n = 2usize;

    let mut rng = Rng::substream(attempt_seed, "gradcheck");
    let batch: Tensor<T> =
        Tensor::new(vec![n, c, h, w], (0..n * c * h * w).map(|_| T::from_f64(rng.uniform())).collect())?;
    let targets: Tensor<T> =
        Tensor::new(vec![n, spec.output_dim], (0..n * spec.output_dim).map(|_| T::from_f64(rng.uniform())).collect())?;

    let weights = init_weights::<T>(spec, attempt_seed, 1.0)?;
    let (_, grads) = loss_and_grad(spec, &weights, &batch, &targets)?;

    let mut probe = ProbeState {
        spec,
        weights: weights.clone(),
        batch: &batch,
        targets: &targets,
        loss_origin: loss(spec, &weights, &batch, &targets)?,
    };

    // First pass: sample every component at the base step.
    let mut components: Vec<(usize, usize)> = Vec::new();
    let mut base: Vec<StepSample> = Vec::new();
    for (ti, tensor) in weights.tensors.iter().enumerate() {
        for ei in 0..tensor.numel() {
            components.push((ti, ei));
            base.push(probe.sample(ti, ei, probe.base_step())?);
        }
    }
    // Calibrate the certificate noise floor at the finest step, where
    // benign curvature has died off and the median second difference is
    // loss rounding (flips are far too rare to move a median). That
    // rounding barely varies with the step: the three loss evaluations
    // share the whole computation apart from one slightly perturbed
    // weight, so their errors mostly cancel instead of dividing by the
    // step. The floor therefore applies unscaled at every level.
    let finest = *LEVELS.last().unwrap();
    let stride = (components.len() / 256).max(1);
    let mut curvatures = Vec::new();
    for &(ti, ei) in components.iter().step_by(stride) {
        curvatures.push(probe.sample(ti, ei, probe.base_step() / finest)?.curvature);
    }
    curvatures.sort_by(f64::total_cmp);
    let noise_floor = 4.0 * curvatures[curvatures.len() / 2];

    let mut outcome = Outcome { worst: 0.0, contested: 0 };
    for (index, &(ti, ei)) in components.iter().enumerate() {
        let measured = measure_component(&mut probe, ti, ei, &base[index], noise_floor)?;
        outcome.contested += usize::from(measured.contested);
        let analytic = grads.tensors[ti].data()[ei].to_f64();
        let numeric = measured.slope;
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        if rel > outcome.worst {
            outcome.worst = rel;
        }
    }
    Ok(outcome)
}

struct ProbeState<'a, T: Real> {
    spec: &'a NetworkSpec,
    weights: NetworkWeights<T>,
    batch: &'a Tensor<T>,
    targets: &'a Tensor<T>,
    loss_origin: f64,
}

struct StepSample {
    fwd: f64,
    bwd: f64,
    central: f64,
    curvature: f64,
}

impl<T: Real> ProbeState<'_, T> {
    fn base_step(&self) -> f64 {
        T::MACHINE_EPS.cbrt() / 8.0
    }

    /// Forward, backward, and central difference quotients for one weight
    /// component at one step size, plus the symmetric second difference in
    /// slope units. The realized steps absorb the quantization of
    /// `weight ± step` in the working precision.
    fn sample(&mut self, ti: usize, ei: usize, step: f64) -> Result<StepSample> {
        let original = self.weights.tensors[ti].data()[ei];
        let plus = original + T::from_f64(step);
        let minus = original - T::from_f64(step);

        self.weights.tensors[ti].data_mut()[ei] = plus;
        let loss_plus = loss(self.spec, &self.weights, self.batch, self.targets)?;
        self.weights.tensors[ti].data_mut()[ei] = minus;
        let loss_minus = loss(self.spec, &self.weights, self.batch, self.targets)?;
        self.weights.tensors[ti].data_mut()[ei] = original;

        let step_up = plus.to_f64() - original.to_f64();
        let step_down = original.to_f64() - minus.to_f64();
        Ok(StepSample {
            fwd: (loss_plus - self.loss_origin) / step_up,
            bwd: (self.loss_origin - loss_minus) / step_down,
            central: (loss_plus - loss_minus) / (step_up + step_down),
            curvature: (loss_plus - 2.0 * self.loss_origin + loss_minus).abs() / (step_up + step_down),
        })
    }
}

struct Measurement {
    slope: f64,
    contested: bool,
}

fn certified(sample: &StepSample, noise_floor: f64) -> bool {
    sample.curvature <= (SMOOTH * sample.central.abs()).max(noise_floor)
}

/// Flip-aware difference estimate for one weight component (see
/// `grad_check` for the certificate rationale).
fn measure_component<T: Real>(
    probe: &mut ProbeState<'_, T>,
    ti: usize,
    ei: usize,
    base: &StepSample,
    noise_floor: f64,
) -> Result<Measurement> {
    if certified(base, noise_floor) {
        return Ok(Measurement { slope: base.central, contested: false });
    }
    let base_step = probe.base_step();
    let mut ladder = vec![StepSample {
        fwd: base.fwd,
        bwd: base.bwd,
        central: base.central,
        curvature: base.curvature,
    }];
    for &level in &LEVELS[1..] {
        let sample = probe.sample(ti, ei, base_step / level)?;
        let smooth = certified(&sample, noise_floor);
        ladder.push(sample);
        if smooth {
            return Ok(Measurement { slope: ladder.last().unwrap().central, contested: false });
        }
    }

    // A flip inside even the finest interval: one side of the weight must
    // still be clean. One-sided quotients carry an O(step * curvature)
    // truncation term and the origin rounding bias, so the widest step of
    // the level-consistent side is the most accurate estimate available.
    let spread = |side: fn(&StepSample) -> f64| -> f64 {
        ladder.windows(2).map(|pair| (side(&pair[0]) - side(&pair[1])).abs()).fold(0.0, f64::max)
    };
    let spread_fwd = spread(|s| s.fwd);
    let spread_bwd = spread(|s| s.bwd);
    let (side_spread, slope) =
        if spread_fwd <= spread_bwd { (spread_fwd, ladder[0].fwd) } else { (spread_bwd, ladder[0].bwd) };
    let tolerated = (SIDE_REL * slope.abs().max(FLOOR)).max(SIDE_ABS);
    Ok(Measurement { slope, contested: side_spread > tolerated })
}
