//! Adaptive Dormand-Prince RK45 integration over complex state vectors.
//!
//! One integrator backs both the classical release equations (4 real
//! degrees of freedom plus energy accumulators) and the vectorized Lindblad
//! equation (dim² complex entries), so tolerances behave identically across
//! the crate.

use nalgebra::DVector;

use crate::{C64, Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 2_000_000,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights equal the last A row (FSAL); 4th-order weights below.
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct Stepper<'a, F> {
    f: &'a F,
    opts: OdeOptions,
    steps_taken: usize,
}

impl<'a, F> Stepper<'a, F>
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    /// Advances y from t0 to t1 exactly, adapting the step size.
    fn advance(&mut self, t0: f64, t1: f64, y: &mut DVector<C64>, h_guess: &mut f64) -> Result<()> {
        let span = t1 - t0;
        if span <= 0.0 {
            return Ok(());
        }
        let mut t = t0;
        let mut h = h_guess.min(span).max(span * 1e-12);
        let mut k: Vec<DVector<C64>> = Vec::with_capacity(7);
        while t < t1 {
            if self.steps_taken >= self.opts.max_steps {
                return Err(Error::NumericDivergence(format!(
                    "ODE step limit {} exhausted at t = {t:.6e}",
                    self.opts.max_steps
                )));
            }
            self.steps_taken += 1;
            if t + h > t1 {
                h = t1 - t;
            }

            k.clear();
            k.push((self.f)(t, y));
            for s in 0..6 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    let a = A[s][j];
                    if a != 0.0 {
                        ys.axpy(C64::new(a * h, 0.0), kj, C64::new(1.0, 0.0));
                    }
                }
                k.push((self.f)(t + C[s] * h, &ys));
            }
            // k[6] was evaluated at y5 (FSAL), so y5 = the ys of stage 6.
            let mut y5 = y.clone();
            for (j, kj) in k.iter().take(6).enumerate() {
                let b = A[5][j];
                if b != 0.0 {
                    y5.axpy(C64::new(b * h, 0.0), kj, C64::new(1.0, 0.0));
                }
            }
            let mut err_vec = DVector::<C64>::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                let db = (if j < 6 { A[5][j] } else { 0.0 }) - B4[j];
                if db != 0.0 {
                    err_vec.axpy(C64::new(db * h, 0.0), kj, C64::new(1.0, 0.0));
                }
            }
            // Scaled RMS error against atol + rtol * |y|.
            let mut acc = 0.0f64;
            for i in 0..y.len() {
                let scale = self.opts.atol + self.opts.rtol * y[i].norm().max(y5[i].norm());
                let e = err_vec[i].norm() / scale;
                acc += e * e;
            }
            let err = (acc / y.len() as f64).sqrt();

            if !err.is_finite() {
                return Err(Error::NumericDivergence(format!(
                    "non-finite ODE state at t = {t:.6e}"
                )));
            }
            if err <= 1.0 {
                t += h;
                *y = y5;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
            if h < span * 1e-15 {
                return Err(Error::NumericDivergence(format!(
                    "ODE step size underflow at t = {t:.6e}"
                )));
            }
        }
        *h_guess = h;
        Ok(())
    }
}

/// Integrates dy/dt = f(t, y) from `t0` to `t1`, returning y(t1).
pub fn integrate<F>(f: &F, t0: f64, t1: f64, y0: DVector<C64>, opts: &OdeOptions) -> Result<DVector<C64>>
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
{
    let mut y = y0;
    let mut h = (t1 - t0) * 1e-3;
    Stepper {
        f,
        opts: *opts,
        steps_taken: 0,
    }
    .advance(t0, t1, &mut y, &mut h)?;
    Ok(y)
}

/// Integrates from `t0` through each time in `samples` (strictly
/// increasing, all ≥ t0), invoking `observer(t, y)` at every sample point.
/// Returns the state at the final sample.
pub fn integrate_observed<F, G>(
    f: &F,
    t0: f64,
    samples: &[f64],
    y0: DVector<C64>,
    opts: &OdeOptions,
    mut observer: G,
) -> Result<DVector<C64>>
where
    F: Fn(f64, &DVector<C64>) -> DVector<C64>,
    G: FnMut(f64, &DVector<C64>),
{
    if samples.is_empty() {
        return Err(Error::EmptySamples("ODE sample times"));
    }
    let mut y = y0;
    let mut t = t0;
    let span = samples[samples.len() - 1] - t0;
    let mut h = if span > 0.0 { span * 1e-3 } else { 1.0 };
    let mut stepper = Stepper {
        f,
        opts: *opts,
        steps_taken: 0,
    };
    for &ts in samples {
        if ts < t {
            return Err(Error::InvalidTime(ts));
        }
        stepper.advance(t, ts, &mut y, &mut h)?;
        t = ts;
        observer(t, &y);
    }
    Ok(y)
}
