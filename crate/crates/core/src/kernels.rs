//! Isotropic covariance kernels with an explicit correlation lengthscale.
//!
//! Every kernel satisfies `k(0) = 1`, is strictly decreasing in the distance
//! and obeys the lengthscale identity `k_lambda(a r) = k_{lambda / a}(r)`.
//!
//! Matérn kernels are positive definite on the unit cube `[0,1]^d` in the
//! sense needed by the estimation theory only when `nu > max((d-1)/2, 1/2)`.
//! This is not enforced here; callers who need the guarantee should check it.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::special::{bessel_k_scaled, ln_gamma};

/// Kernel family, with the Matérn smoothness carried in the variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    SquaredExponential,
    Matern { nu: f64 },
}

/// An isotropic covariance function `k_lambda(r) = k_1(r / lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelModel {
    family: KernelFamily,
    lambda: f64,
    general_bessel: bool,
}

fn is_half_integer(nu: f64) -> Option<u8> {
    [0.5, 1.5, 2.5]
        .iter()
        .position(|&h| h == nu)
        .map(|i| i as u8)
}

impl KernelModel {
    pub fn squared_exponential(lambda: f64) -> Result<Self> {
        Self::new(KernelFamily::SquaredExponential, lambda)
    }

    pub fn matern(lambda: f64, nu: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern { nu }, lambda)
    }

    pub fn new(family: KernelFamily, lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(invalid("lambda", format!("must be positive, got {lambda}")));
        }
        if let KernelFamily::Matern { nu } = family {
            if !(nu.is_finite() && nu > 0.0) {
                return Err(invalid("nu", format!("must be positive, got {nu}")));
            }
        }
        Ok(Self {
            family,
            lambda,
            general_bessel: true,
        })
    }

    /// Enables or disables the general-order Bessel evaluation for Matérn kernels.
    /// With it disabled only `nu` in {1/2, 3/2, 5/2} can be evaluated.
    pub fn with_general_bessel(mut self, enabled: bool) -> Self {
        self.general_bessel = enabled;
        self
    }

    /// Same family with a different lengthscale.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Ok(Self::new(self.family, lambda)?.with_general_bessel(self.general_bessel))
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn nu(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Matern { nu } => Some(nu),
            KernelFamily::SquaredExponential => None,
        }
    }

    /// Short family label used in output files: `se` or `matern`.
    pub fn label(&self) -> &'static str {
        match self.family {
            KernelFamily::SquaredExponential => "se",
            KernelFamily::Matern { .. } => "matern",
        }
    }

    /// Checks that the kernel can be evaluated under the current configuration.
    pub fn validate(&self) -> Result<()> {
        match self.family {
            KernelFamily::Matern { nu } if !self.general_bessel && is_half_integer(nu).is_none() => {
                Err(Error::UnsupportedSmoothness(nu))
            }
            _ => Ok(()),
        }
    }

    /// Unit-lengthscale profile `k_1(s)`.
    pub fn profile(&self, s: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-0.5 * s * s).exp(),
            KernelFamily::Matern { nu } => {
                if s == 0.0 {
                    return 1.0;
                }
                let z = (2.0 * nu).sqrt() * s;
                match is_half_integer(nu) {
                    Some(0) => (-z).exp(),
                    Some(1) => (1.0 + z) * (-z).exp(),
                    Some(_) => (1.0 + z + z * z / 3.0) * (-z).exp(),
                    None => matern_general(nu, z),
                }
            }
        }
    }

    /// `k_lambda(r)`.
    pub fn eval(&self, r: f64) -> Result<f64> {
        if !r.is_finite() {
            return Err(invalid("r", format!("must be finite, got {r}")));
        }
        if r < 0.0 {
            return Err(invalid("r", format!("must be nonnegative, got {r}")));
        }
        self.validate()?;
        Ok(self.profile(r / self.lambda))
    }

    /// `|k_lambda(alpha r) - k_{lambda/alpha}(r)|`; zero up to rounding for
    /// every kernel in this module.
    pub fn rescale_identity_residual(&self, alpha: f64, r: f64) -> Result<f64> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid("alpha", format!("must be positive, got {alpha}")));
        }
        let scaled = self.with_lambda(self.lambda / alpha)?;
        Ok((self.eval(alpha * r)? - scaled.eval(r)?).abs())
    }

    /// The unique `s > 0` with `k_1(s) = 1/2`, independent of the lengthscale.
    pub fn half_width(&self) -> Result<f64> {
        self.validate()?;
        let g = |s: f64| self.profile(s) - 0.5;
        let mut hi = 1.0;
        let mut expansions = 0;
        while g(hi) >= 0.0 {
            hi *= 2.0;
            expansions += 1;
            if expansions > 200 || !hi.is_finite() {
                return Err(Error::BracketNotFound);
            }
        }
        let mut lo = 0.0;
        if g(lo) <= 0.0 {
            return Err(Error::BracketNotFound);
        }
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn matern_general(nu: f64, z: f64) -> f64 {
    let log_k = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * z.ln()
        + bessel_k_scaled(nu, z).ln()
        - z;
    log_k.exp().min(1.0)
}

impl fmt::Display for KernelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            KernelFamily::SquaredExponential => write!(f, "se:lambda={}", self.lambda),
            KernelFamily::Matern { nu } => write!(f, "matern:lambda={},nu={}", self.lambda, nu),
        }
    }
}

fn parse_err(token: &str, reason: impl Into<String>) -> Error {
    Error::KernelParse {
        token: token.to_string(),
        reason: reason.into(),
    }
}

impl FromStr for KernelModel {
    type Err = Error;

    /// Parses `se:lambda=<float>` or `matern:lambda=<float>,nu=<float>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, params) = s
            .split_once(':')
            .ok_or_else(|| parse_err(s, "expected `<family>:<key>=<value>,...`"))?;
        let name = name.trim();
        let mut lambda = None;
        let mut nu = None;
        for item in params.split(',') {
            let item = item.trim();
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| parse_err(item, "expected `<key>=<value>`"))?;
            let value_str = value.trim();
            let parsed: f64 = value_str
                .parse()
                .map_err(|_| parse_err(value_str, "not a number"))?;
            let slot = match key.trim() {
                "lambda" => &mut lambda,
                "nu" => &mut nu,
                other => return Err(parse_err(other, "unknown parameter")),
            };
            if slot.replace(parsed).is_some() {
                return Err(parse_err(key.trim(), "duplicate parameter"));
            }
        }
        let lambda = lambda.ok_or_else(|| parse_err(s, "missing `lambda`"))?;
        let family = match name {
            "se" => {
                if nu.is_some() {
                    return Err(parse_err("nu", "not a parameter of `se`"));
                }
                KernelFamily::SquaredExponential
            }
            "matern" => KernelFamily::Matern {
                nu: nu.ok_or_else(|| parse_err(s, "missing `nu`"))?,
            },
            other => return Err(parse_err(other, "unknown kernel family")),
        };
        KernelModel::new(family, lambda).map_err(|e| parse_err(s, e.to_string()))
    }
}
