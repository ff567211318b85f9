//! Cylindrical test functionals `phi(x) = f(x(t_1), ..., x(t_k))`.

use std::fmt;
use std::sync::Arc;

use crate::error::{GsurfError, Result};
use crate::path_engine::TimeGrid;
use crate::spectral_ops::CameronMartinVector;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub struct CylindricalFunctional {
    pub times: Vec<f64>,
    f: Arc<ValueFn>,
    grad: Arc<GradFn>,
    pub sup_bound: f64,
    pub label: String,
}

impl fmt::Debug for CylindricalFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylindricalFunctional")
            .field("label", &self.label)
            .field("times", &self.times)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl CylindricalFunctional {
    pub fn new<F, G>(times: Vec<f64>, f: F, grad: G, sup_bound: f64, label: impl Into<String>) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(GsurfError::Parameter("evaluation times must lie in [0, 1]".into()));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GsurfError::Parameter("evaluation times must be strictly increasing".into()));
        }
        Ok(Self { times, f: Arc::new(f), grad: Arc::new(grad), sup_bound, label: label.into() })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![], move |_| c, |_, _| {}, c.abs(), format!("{c}")).expect("valid")
    }

    /// `x(t)`; unbounded, `sup_bound` is infinite.
    pub fn coordinate(t: f64) -> Result<Self> {
        Self::new(vec![t], |x| x[0], |_, g| g[0] = 1.0, f64::INFINITY, format!("x({t})"))
    }

    pub fn cos_at(t: f64) -> Result<Self> {
        Self::new(vec![t], |x| x[0].cos(), |x, g| g[0] = -x[0].sin(), 1.0, format!("cos(x({t}))"))
    }

    pub fn sin_at(t: f64) -> Result<Self> {
        Self::new(vec![t], |x| x[0].sin(), |x, g| g[0] = x[0].cos(), 1.0, format!("sin(x({t}))"))
    }

    /// The five bounded functionals used by the verification suites.
    pub fn standard_suite() -> Vec<Self> {
        let gauss = Self::new(
            vec![0.5],
            |x| (-0.5 * x[0] * x[0]).exp(),
            |x, g| g[0] = -x[0] * (-0.5 * x[0] * x[0]).exp(),
            1.0,
            "exp(-x(0.5)^2/2)",
        );
        let mixed = Self::new(
            vec![0.25, 0.75],
            |x| x[0].atan() + 0.5 * x[1].cos(),
            |x, g| {
                g[0] = 1.0 / (1.0 + x[0] * x[0]);
                g[1] = -0.5 * x[1].sin();
            },
            std::f64::consts::FRAC_PI_2 + 0.5,
            "atan(x(0.25))+cos(x(0.75))/2",
        );
        vec![
            Self::constant(1.0),
            Self::cos_at(0.5).expect("valid"),
            Self::sin_at(1.0).expect("valid"),
            gauss.expect("valid"),
            mixed.expect("valid"),
        ]
    }

    pub fn k(&self) -> usize {
        self.times.len()
    }

    pub fn is_constant(&self) -> bool {
        self.times.is_empty()
    }

    /// Nearest-node indices of the evaluation times on `grid`.
    pub fn indices(&self, grid: TimeGrid) -> Vec<usize> {
        self.times.iter().map(|t| grid.index_of(*t)).collect()
    }

    pub fn eval_at(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn grad_at(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    fn coords(&self, values: &[f64]) -> Vec<f64> {
        let grid = TimeGrid::new(values.len() - 1).expect("path has >= 2 cells");
        self.indices(grid).iter().map(|&i| values[i]).collect()
    }

    /// `phi` on a node vector.
    pub fn eval(&self, values: &[f64]) -> f64 {
        (self.f)(&self.coords(values))
    }

    /// `phi` and its gradient in the coordinates `x(t_i)`.
    pub fn eval_with_grad(&self, values: &[f64]) -> (f64, Vec<f64>) {
        let x = self.coords(values);
        let mut g = vec![0.0; x.len()];
        (self.grad)(&x, &mut g);
        ((self.f)(&x), g)
    }

    /// Directional derivative `D phi . z = sum_i d_i f * z(t_i)`.
    pub fn derivative(&self, values: &[f64], z: &CameronMartinVector) -> f64 {
        if z.is_zero() || self.is_constant() {
            return 0.0;
        }
        let grid = TimeGrid::new(values.len() - 1).expect("path has >= 2 cells");
        let (_, g) = self.eval_with_grad(values);
        self.indices(grid).iter().zip(&g).map(|(&i, d)| d * z.z_values[i]).sum()
    }

    /// Largest deviation between the gradient and central differences with
    /// step `h` at the given points.
    pub fn gradient_check(&self, points: &[Vec<f64>], h: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for p in points {
            let mut g = vec![0.0; p.len()];
            (self.grad)(p, &mut g);
            for i in 0..p.len() {
                let mut a = p.clone();
                let mut b = p.clone();
                a[i] += h;
                b[i] -= h;
                let fd = ((self.f)(&a) - (self.f)(&b)) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs());
            }
        }
        worst
    }
}
