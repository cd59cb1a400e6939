//! Analytic time signals and the bounded state nonlinearity, each able to
//! report its own derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar time signal with an analytic derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Signal {
    Constant {
        value: f64,
    },
    /// `offset + amplitude·sin(freq·t + phase)`
    Sin {
        amplitude: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + amplitude·cos(freq·t + phase)`
    Cos {
        amplitude: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `Σ coeffs[k]·t^k`
    Polynomial {
        coeffs: Vec<f64>,
    },
}

impl Signal {
    pub fn zero() -> Self {
        Signal::Constant { value: 0.0 }
    }

    pub fn constant(value: f64) -> Self {
        Signal::Constant { value }
    }

    pub fn sin(amplitude: f64, freq: f64) -> Self {
        Signal::Sin {
            amplitude,
            freq,
            phase: 0.0,
            offset: 0.0,
        }
    }

    /// Value and time derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        match *self {
            Signal::Constant { value } => (value, 0.0),
            Signal::Sin {
                amplitude,
                freq,
                phase,
                offset,
            } => {
                let arg = freq * t + phase;
                (offset + amplitude * arg.sin(), amplitude * freq * arg.cos())
            }
            Signal::Cos {
                amplitude,
                freq,
                phase,
                offset,
            } => {
                let arg = freq * t + phase;
                (offset + amplitude * arg.cos(), -amplitude * freq * arg.sin())
            }
            Signal::Polynomial { ref coeffs } => {
                let mut value = 0.0;
                let mut deriv = 0.0;
                for c in coeffs.iter().rev() {
                    deriv = deriv * t + value;
                    value = value * t + c;
                }
                (value, deriv)
            }
        }
    }

    /// Bound on `(|s|, |ṡ|)` over `[0, horizon]`.
    pub fn bounds(&self, horizon: f64) -> (f64, f64) {
        match *self {
            Signal::Constant { value } => (value.abs(), 0.0),
            Signal::Sin {
                amplitude,
                freq,
                offset,
                ..
            }
            | Signal::Cos {
                amplitude,
                freq,
                offset,
                ..
            } => (offset.abs() + amplitude.abs(), (amplitude * freq).abs()),
            Signal::Polynomial { ref coeffs } => {
                let h = horizon.abs().max(1.0);
                let v = coeffs.iter().enumerate().map(|(k, c)| c.abs() * h.powi(k as i32)).sum();
                let d = coeffs
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, c)| k as f64 * c.abs() * h.powi(k as i32 - 1))
                    .sum();
                (v, d)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = match self {
            Signal::Constant { value } => value.is_finite(),
            Signal::Sin {
                amplitude,
                freq,
                phase,
                offset,
            }
            | Signal::Cos {
                amplitude,
                freq,
                phase,
                offset,
            } => [amplitude, freq, phase, offset].iter().all(|v| v.is_finite()),
            Signal::Polynomial { coeffs } => !coeffs.is_empty() && coeffs.iter().all(|v| v.is_finite()),
        };
        if finite {
            Ok(())
        } else {
            Err(Error::Config(format!("signal has non-finite or missing parameters: {self:?}")))
        }
    }
}

/// Bounded scalar function used inside a nonlinear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermFn {
    Sin,
    Cos,
    Tanh,
}

impl TermFn {
    fn value_and_slope(self, s: f64) -> (f64, f64) {
        match self {
            TermFn::Sin => (s.sin(), s.cos()),
            TermFn::Cos => (s.cos(), -s.sin()),
            TermFn::Tanh => {
                let th = s.tanh();
                (th, 1.0 - th * th)
            }
        }
    }
}

/// Argument of a nonlinear term: an entry of `x`, an entry of `z`, or time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermArg {
    X(usize),
    Z(usize),
    Time,
}

impl Serialize for TermArg {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let text = match self {
            TermArg::X(i) => format!("x{}", i + 1),
            TermArg::Z(i) => format!("z{}", i + 1),
            TermArg::Time => "t".to_string(),
        };
        s.serialize_str(&text)
    }
}

impl<'de> Deserialize<'de> for TermArg {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let parse_index = |rest: &str| -> std::result::Result<usize, D::Error> {
            match rest.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(serde::de::Error::custom(format!(
                    "bad term argument {text:?}, expected x<k>, z<k> or t"
                ))),
            }
        };
        if text == "t" {
            Ok(TermArg::Time)
        } else if let Some(rest) = text.strip_prefix('x') {
            parse_index(rest).map(TermArg::X)
        } else if let Some(rest) = text.strip_prefix('z') {
            parse_index(rest).map(TermArg::Z)
        } else {
            Err(serde::de::Error::custom(format!(
                "bad term argument {text:?}, expected x<k>, z<k> or t"
            )))
        }
    }
}

/// `coeff · func(gain · arg)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub func: TermFn,
    pub coeff: f64,
    #[serde(default = "unit_gain")]
    pub gain: f64,
    pub arg: TermArg,
}

fn unit_gain() -> f64 {
    1.0
}

/// The unmodelled nonlinearity `f_d(x, z, t)` as a sum of bounded terms.
///
/// Only bounded terms are admitted, so `|f_d| ≤ Σ|coeff|` everywhere.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonlinearity {
    pub terms: Vec<Term>,
}

/// Value of `f_d` together with its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearityJet {
    pub value: f64,
    pub dx: Vec<f64>,
    pub dz: Vec<f64>,
    pub dt: f64,
}

impl Nonlinearity {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    fn arg_value(arg: TermArg, x: &[f64], z: &[f64], t: f64) -> f64 {
        match arg {
            TermArg::X(i) => x[i],
            TermArg::Z(i) => z[i],
            TermArg::Time => t,
        }
    }

    pub fn value(&self, x: &[f64], z: &[f64], t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let s = term.gain * Self::arg_value(term.arg, x, z, t);
                term.coeff * term.func.value_and_slope(s).0
            })
            .sum()
    }

    /// Value plus the directional derivative `∂f/∂x·ẋ + ∂f/∂z·ż + ∂f/∂t`.
    pub fn value_and_rate(&self, x: &[f64], z: &[f64], t: f64, xdot: &[f64], zdot: &[f64]) -> (f64, f64) {
        let mut value = 0.0;
        let mut rate = 0.0;
        for term in &self.terms {
            let s = term.gain * Self::arg_value(term.arg, x, z, t);
            let (f, slope) = term.func.value_and_slope(s);
            value += term.coeff * f;
            let arg_rate = match term.arg {
                TermArg::X(i) => xdot[i],
                TermArg::Z(i) => zdot[i],
                TermArg::Time => 1.0,
            };
            rate += term.coeff * slope * term.gain * arg_rate;
        }
        (value, rate)
    }

    pub fn jet(&self, x: &[f64], z: &[f64], t: f64) -> NonlinearityJet {
        let mut jet = NonlinearityJet {
            value: 0.0,
            dx: vec![0.0; x.len()],
            dz: vec![0.0; z.len()],
            dt: 0.0,
        };
        for term in &self.terms {
            let s = term.gain * Self::arg_value(term.arg, x, z, t);
            let (f, slope) = term.func.value_and_slope(s);
            jet.value += term.coeff * f;
            let d = term.coeff * slope * term.gain;
            match term.arg {
                TermArg::X(i) => jet.dx[i] += d,
                TermArg::Z(i) => jet.dz[i] += d,
                TermArg::Time => jet.dt += d,
            }
        }
        jet
    }

    /// Global bound on `|f_d|`.
    pub fn sup_abs(&self) -> f64 {
        self.terms.iter().map(|t| t.coeff.abs()).sum()
    }

    pub fn validate(&self, nu: usize, nz: usize) -> Result<()> {
        for (k, term) in self.terms.iter().enumerate() {
            if !term.coeff.is_finite() || !term.gain.is_finite() {
                return Err(Error::Config(format!("f_d term {k} has non-finite parameters")));
            }
            match term.arg {
                TermArg::X(i) if i >= nu => {
                    return Err(Error::Config(format!("f_d term {k} refers to x{} but nu = {nu}", i + 1)))
                }
                TermArg::Z(i) if i >= nz => {
                    return Err(Error::Config(format!(
                        "f_d term {k} refers to z{} but n - nu = {nz}",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}
