//! Scenario files: JSON schema, validation with JSON-pointer error paths, and
//! the built-in benchmark fixtures.

use serde::{Deserialize, Serialize};

use crate::design::DesignConfig;
use crate::dob::QFilterConfig;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{assemble_as_b, AugmentedNominal, NominalModel, OuterController, PlantModel};
use crate::signals::{Nonlinearity, Signal, Term, TermArg, TermFn};
use crate::sim::{NoiseSpec, SimConfig};

/// Multiple of the sampled `sup|𝐝|` used when `s_bar` is omitted.
pub const S_BAR_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub nu: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub s: Vec<Vec<f64>>,
    pub coupling: Vec<f64>,
    pub gain: f64,
    pub gain_range: [f64; 2],
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NominalSection {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gain: f64,
    pub s: Vec<Vec<f64>>,
    pub coupling: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default)]
    pub j: Vec<Vec<f64>>,
    #[serde(default)]
    pub k: Vec<f64>,
    #[serde(default)]
    pub l: Vec<f64>,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QFilterSection {
    pub l: usize,
    pub m: usize,
    pub a: Vec<f64>,
    #[serde(default)]
    pub c: Vec<f64>,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsSection {
    pub reference: Signal,
    pub disturbance: Signal,
}

/// On-disk scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub plant: PlantSection,
    pub nominal: NominalSection,
    pub controller: ControllerSection,
    pub qfilter: QFilterSection,
    pub signals: SignalsSection,
    pub sim: SimConfig,
    #[serde(default)]
    pub design: DesignConfig,
}

/// Validated scenario with every model object constructed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub plant: PlantModel,
    pub nominal: NominalModel,
    pub controller: OuterController,
    pub qfilter: QFilterConfig,
    pub reference: Signal,
    pub disturbance: Signal,
    pub sim: SimConfig,
    pub design: DesignConfig,
    pub aug: AugmentedNominal,
}

fn at(pointer: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Config(format!("{pointer}: {}", strip(e)))
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) | Error::Shape(m) => m,
        other => other.to_string(),
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<DenseMatrix> {
    if rows.is_empty() {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    DenseMatrix::from_nested(rows)
}

fn dotted_to_pointer(path: &str) -> String {
    if path == "." || path.is_empty() {
        return "/".into();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        // array indices arrive as `name[3]`
        let mut rest = seg;
        while let Some(open) = rest.find('[') {
            out.push('/');
            out.push_str(&rest[..open]);
            let close = rest[open..].find(']').map(|c| open + c).unwrap_or(rest.len());
            rest = rest.get(open + 1..close).unwrap_or("");
            if !rest.is_empty() {
                out.push('/');
                out.push_str(rest);
            }
            rest = "";
        }
        if !seg.contains('[') {
            out.push('/');
            out.push_str(seg);
        }
    }
    out.replace("//", "/")
}

impl ScenarioFile {
    /// Parses JSON, reporting failures with the JSON pointer of the culprit.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = dotted_to_pointer(&e.path().to_string());
            Error::Config(format!("{pointer}: {}", e.inner()))
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validates every section and constructs the model objects.
    pub fn build(&self) -> Result<Scenario> {
        let p = &self.plant;
        let plant = PlantModel::new(
            p.nu,
            p.phi.clone(),
            p.psi.clone(),
            matrix(&p.s).map_err(at("/plant/s"))?,
            p.coupling.clone(),
            p.gain,
            (p.gain_range[0], p.gain_range[1]),
            p.nonlinearity.clone(),
        )
        .map_err(at("/plant"))?;
        let n = &self.nominal;
        let nominal = NominalModel::new(
            n.phi.clone(),
            n.psi.clone(),
            n.gain,
            matrix(&n.s).map_err(at("/nominal/s"))?,
            n.coupling.clone(),
        )
        .map_err(at("/nominal"))?;
        nominal.check_against(&plant).map_err(at("/nominal"))?;
        let c = &self.controller;
        let controller = OuterController::new(matrix(&c.j).map_err(at("/controller/j"))?, c.k.clone(), c.l.clone(), c.d)
            .map_err(at("/controller"))?;
        self.signals.reference.validate().map_err(at("/signals/reference"))?;
        self.signals.disturbance.validate().map_err(at("/signals/disturbance"))?;
        self.sim.validate().map_err(at("/sim"))?;
        self.design.validate().map_err(at("/design"))?;
        let aug = assemble_as_b(&plant, &nominal, &controller).map_err(at("/controller"))?;

        let q = &self.qfilter;
        let mut qfilter = QFilterConfig {
            l: q.l,
            m: q.m,
            a: q.a.clone(),
            c: q.c.clone(),
            tau: q.tau,
            s_bar: q.s_bar.unwrap_or(f64::INFINITY),
        };
        qfilter.validate(plant.nu).map_err(at("/qfilter"))?;
        crate::transform::check_fast_stability(&nominal, &qfilter, &plant.gain_grid(self.design.gain_grid))
            .map_err(at("/qfilter"))?;

        let mut scenario = Scenario {
            plant,
            nominal,
            controller,
            qfilter: qfilter.clone(),
            reference: self.signals.reference.clone(),
            disturbance: self.signals.disturbance.clone(),
            sim: self.sim.clone(),
            design: self.design.clone(),
            aug,
        };
        if q.s_bar.is_none() {
            let bound = crate::design::lumped_bound_estimate(&scenario).map_err(at("/qfilter/s_bar"))?;
            qfilter.s_bar = (S_BAR_FACTOR * bound).max(f64::MIN_POSITIVE);
            scenario.qfilter = qfilter;
        }
        Ok(scenario)
    }
}

impl Scenario {
    pub fn from_json_str(text: &str) -> Result<Self> {
        ScenarioFile::from_json_str(text)?.build()
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Two-state-chain benchmark with one internal state and a static
    /// integrating controller.
    pub fn benchmark() -> Self {
        benchmark_file().build().expect("benchmark fixture is valid")
    }

    /// First-order benchmark whose design interval is wide enough to probe.
    pub fn design_benchmark() -> Self {
        design_benchmark_file().build().expect("design fixture is valid")
    }

    /// Eps pair `(ε_T, ε_U)` of the design section.
    pub fn eps(&self) -> (f64, f64) {
        (self.design.eps_t, self.design.eps_u)
    }
}

/// File form of [`Scenario::benchmark`].
pub fn benchmark_file() -> ScenarioFile {
    ScenarioFile {
        plant: PlantSection {
            nu: 2,
            phi: vec![-1.0, -1.5],
            psi: vec![0.5],
            s: vec![vec![-2.0]],
            coupling: vec![1.0],
            gain: 1.1,
            gain_range: [0.8, 1.2],
            nonlinearity: Nonlinearity::new(vec![Term {
                func: TermFn::Sin,
                coeff: 0.1,
                gain: 1.0,
                arg: TermArg::X(0),
            }]),
        },
        nominal: NominalSection {
            phi: vec![-1.0, -2.0],
            psi: vec![0.4],
            gain: 1.0,
            s: vec![vec![-2.0]],
            coupling: vec![1.0],
        },
        controller: ControllerSection {
            j: vec![vec![0.0]],
            k: vec![1.0],
            l: vec![2.0],
            d: 3.0,
        },
        qfilter: QFilterSection {
            l: 3,
            m: 3,
            a: vec![1.0, 3.0, 3.0],
            c: vec![],
            tau: 0.05,
            s_bar: Some(16.0),
        },
        signals: SignalsSection {
            reference: Signal::constant(1.0),
            disturbance: Signal::sin(0.5, 2.0),
        },
        sim: SimConfig {
            step: 1e-3,
            horizon: 30.0,
            seed: 1,
            noise: NoiseSpec::Square { mu: 0.01, period: 0.02 },
            initial: Default::default(),
            max_samples: 20_000,
        },
        design: DesignConfig::default(),
    }
}

/// File form of [`Scenario::design_benchmark`].
pub fn design_benchmark_file() -> ScenarioFile {
    ScenarioFile {
        plant: PlantSection {
            nu: 1,
            phi: vec![-0.45],
            psi: vec![0.05],
            s: vec![vec![-4.5]],
            coupling: vec![1.0],
            gain: 1.02,
            gain_range: [0.95, 1.05],
            nonlinearity: Nonlinearity::new(vec![Term {
                func: TermFn::Sin,
                coeff: 0.02,
                gain: 1.0,
                arg: TermArg::X(0),
            }]),
        },
        nominal: NominalSection {
            phi: vec![-0.5],
            psi: vec![0.0],
            gain: 1.0,
            s: vec![vec![-4.5]],
            coupling: vec![1.0],
        },
        controller: ControllerSection {
            j: vec![vec![-3.0]],
            k: vec![1.5],
            l: vec![1.5],
            d: 3.5,
        },
        qfilter: QFilterSection {
            l: 2,
            m: 2,
            a: vec![1.0, 1.0],
            c: vec![],
            tau: 1e-5,
            s_bar: None,
        },
        signals: SignalsSection {
            reference: Signal::constant(0.2),
            disturbance: Signal::sin(0.1, 1.0),
        },
        sim: SimConfig {
            step: 1e-3,
            horizon: 5.0,
            seed: 1,
            noise: NoiseSpec::Square { mu: 0.0, period: 0.02 },
            initial: Default::default(),
            max_samples: 20_000,
        },
        design: DesignConfig::default(),
    }
}
