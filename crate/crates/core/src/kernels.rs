//! Coordinate standardization and the five spatialization functions.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("coordinate column {0} has zero spread")]
    DegenerateColumn(usize),
    #[error("scale quantile of dimension {0} is not positive")]
    DegenerateScale(usize),
    #[error("kernel family {family:?} cannot use scale quantile {quantile:?}")]
    InvalidSpec {
        family: KernelFamily,
        quantile: Option<ScaleQuantile>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    Linear,
    Exponential,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScaleQuantile {
    Q40,
    Q60,
}

impl ScaleQuantile {
    pub fn level(self) -> f64 {
        match self {
            ScaleQuantile::Q40 => 0.4,
            ScaleQuantile::Q60 => 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    quantile: Option<ScaleQuantile>,
}

impl KernelSpec {
    /// The candidate models in their fixed order: linear, exponential at the
    /// 40% and 60% scale, periodic at the 40% and 60% scale.
    pub const ALL: [KernelSpec; 5] = [
        KernelSpec {
            family: KernelFamily::Linear,
            quantile: None,
        },
        KernelSpec {
            family: KernelFamily::Exponential,
            quantile: Some(ScaleQuantile::Q40),
        },
        KernelSpec {
            family: KernelFamily::Exponential,
            quantile: Some(ScaleQuantile::Q60),
        },
        KernelSpec {
            family: KernelFamily::Periodic,
            quantile: Some(ScaleQuantile::Q40),
        },
        KernelSpec {
            family: KernelFamily::Periodic,
            quantile: Some(ScaleQuantile::Q60),
        },
    ];

    pub fn new(family: KernelFamily, quantile: Option<ScaleQuantile>) -> Result<Self, KernelError> {
        let ok = matches!(
            (family, quantile),
            (KernelFamily::Linear, None) | (KernelFamily::Exponential | KernelFamily::Periodic, Some(_))
        );
        if ok {
            Ok(Self { family, quantile })
        } else {
            Err(KernelError::InvalidSpec { family, quantile })
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn quantile(&self) -> Option<ScaleQuantile> {
        self.quantile
    }

    /// Short stable name used in output tables.
    pub fn name(&self) -> &'static str {
        match (self.family, self.quantile) {
            (KernelFamily::Linear, _) => "linear",
            (KernelFamily::Exponential, Some(ScaleQuantile::Q40)) => "exp_q40",
            (KernelFamily::Exponential, _) => "exp_q60",
            (KernelFamily::Periodic, Some(ScaleQuantile::Q40)) => "periodic_q40",
            (KernelFamily::Periodic, _) => "periodic_q60",
        }
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coordinates with every column at mean 0 and sample standard deviation 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StdCoordinates {
    points: Vec<[f64; 2]>,
}

impl StdCoordinates {
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn column(&self, d: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[d]).collect()
    }
}

/// Per-column z-scores using the `n - 1` divisor.
pub fn standardize(points: &[[f64; 2]]) -> Result<StdCoordinates, KernelError> {
    let n = points.len();
    let mut out = points.to_vec();
    for d in 0..2 {
        if n < 2 {
            return Err(KernelError::DegenerateColumn(d));
        }
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / n as f64;
        let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        if !(sd > 0.0) || points.iter().all(|p| p[d] == points[0][d]) {
            return Err(KernelError::DegenerateColumn(d));
        }
        for (o, p) in out.iter_mut().zip(points) {
            o[d] = (p[d] - mean) / sd;
        }
    }
    Ok(StdCoordinates { points: out })
}

/// Empirical quantile by linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-dimension scale parameters of the exponential and periodic kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelScales {
    pub q40: [f64; 2],
    pub q60: [f64; 2],
}

/// 40% and 60% quantiles of the absolute standardized coordinates.
pub fn resolve_scales(std: &StdCoordinates) -> Result<KernelScales, KernelError> {
    let mut q40 = [0.0; 2];
    let mut q60 = [0.0; 2];
    for d in 0..2 {
        let mut abs: Vec<f64> = std.points.iter().map(|p| p[d].abs()).collect();
        abs.sort_by(f64::total_cmp);
        q40[d] = quantile_type7(&abs, 0.4);
        q60[d] = quantile_type7(&abs, 0.6);
        if !(q40[d] > 0.0) {
            return Err(KernelError::DegenerateScale(d));
        }
    }
    Ok(KernelScales { q40, q60 })
}

/// A kernel with its scales bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub spec: KernelSpec,
    /// Per-dimension scale; unused by the linear kernel.
    pub scales: [f64; 2],
}

impl Kernel {
    pub fn resolve(spec: KernelSpec, scales: &KernelScales) -> Self {
        let scales = match spec.quantile {
            None => [1.0, 1.0],
            Some(ScaleQuantile::Q40) => scales.q40,
            Some(ScaleQuantile::Q60) => scales.q60,
        };
        Self { spec, scales }
    }

    /// Value of the spatialization function at standardized coordinate `x`
    /// of dimension `d`. The exponential form takes `x` itself, not `x^2`.
    pub fn eval(&self, x: f64, d: usize) -> f64 {
        let l = self.scales[d];
        match self.spec.family {
            KernelFamily::Linear => x,
            KernelFamily::Exponential => (-x / (2.0 * l * l)).exp(),
            KernelFamily::Periodic => (2.0 * PI * x / l).cos(),
        }
    }
}

pub fn eval_kernel(kernel: &Kernel, x: f64, d: usize) -> f64 {
    kernel.eval(x, d)
}

/// `n x 2` matrix of kernel values, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_columns(first: Vec<f64>, second: Vec<f64>) -> Self {
        assert_eq!(first.len(), second.len(), "design columns must have equal length");
        let n = first.len();
        let mut values = first;
        values.extend(second);
        Self { n, values }
    }

    pub fn n_spots(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, d: usize) -> f64 {
        self.values[d * self.n + i]
    }

    pub fn column(&self, d: usize) -> &[f64] {
        &self.values[d * self.n..(d + 1) * self.n]
    }
}

pub fn build_design(std: &StdCoordinates, kernel: &Kernel) -> DesignMatrix {
    let col = |d: usize| std.points.iter().map(|p| kernel.eval(p[d], d)).collect::<Vec<_>>();
    DesignMatrix::from_columns(col(0), col(1))
}
