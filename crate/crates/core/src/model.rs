//! Uncertain plant in normal form, its nominal model, the outer-loop
//! controller, and the augmented nominal closed loop.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, is_hurwitz, DenseMatrix};
use crate::signals::Nonlinearity;

/// Uncertain SISO plant: `ẋ = A_ν x + B_ν(φᵀx + ψᵀz + f_d + g(u + d))`,
/// `ż = Sz + G x₁`, `y = x₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub nu: usize,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub s: DenseMatrix,
    pub coupling: Vec<f64>,
    pub gain: f64,
    pub gain_lo: f64,
    pub gain_hi: f64,
    pub nonlinearity: Nonlinearity,
}

/// Nominal model used by the controller and the observer.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalModel {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub gain: f64,
    pub s: DenseMatrix,
    pub coupling: Vec<f64>,
}

/// Linear output-feedback controller `θ̇ = Jθ + K(r − y)`, `u = Lθ + D(r − y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterController {
    pub j: DenseMatrix,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub d: f64,
}

fn check_finite(name: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} has non-finite entries")))
    }
}

fn check_len(name: &str, v: &[f64], want: usize) -> Result<()> {
    if v.len() == want {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} has length {}, expected {want}", v.len())))
    }
}

fn check_hurwitz(name: &str, m: &DenseMatrix) -> Result<()> {
    let verdict = is_hurwitz(m)?;
    if verdict.hurwitz {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{name} is not Hurwitz (max eigenvalue real part {:.6e})",
            verdict.margin
        )))
    }
}

impl PlantModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        nu: usize,
        phi: Vec<f64>,
        psi: Vec<f64>,
        s: DenseMatrix,
        coupling: Vec<f64>,
        gain: f64,
        (gain_lo, gain_hi): (f64, f64),
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        if nu == 0 {
            return Err(Error::Config("relative degree must be >= 1".into()));
        }
        let nz = psi.len();
        if nz == 0 {
            return Err(Error::Config("state dimension n must exceed nu (psi is empty)".into()));
        }
        check_len("phi", &phi, nu)?;
        check_len("G", &coupling, nz)?;
        if s.shape() != (nz, nz) {
            return Err(Error::Config(format!("S has shape {:?}, expected {nz}x{nz}", s.shape())));
        }
        check_finite("phi", &phi)?;
        check_finite("psi", &psi)?;
        check_finite("G", &coupling)?;
        if ![gain, gain_lo, gain_hi].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("plant gain bounds must be finite".into()));
        }
        if gain_lo == 0.0 || gain_hi == 0.0 || gain_lo.signum() != gain_hi.signum() {
            return Err(Error::Config(format!(
                "gain bounds [{gain_lo}, {gain_hi}] must be nonzero with equal sign"
            )));
        }
        if gain_lo > gain_hi {
            return Err(Error::Config(format!("gain bounds [{gain_lo}, {gain_hi}] are reversed")));
        }
        if gain < gain_lo || gain > gain_hi {
            return Err(Error::Config(format!(
                "plant gain {gain} lies outside [{gain_lo}, {gain_hi}]"
            )));
        }
        check_hurwitz("S", &s)?;
        nonlinearity.validate(nu, nz)?;
        Ok(Self {
            nu,
            phi,
            psi,
            s,
            coupling,
            gain,
            gain_lo,
            gain_hi,
            nonlinearity,
        })
    }

    pub fn nz(&self) -> usize {
        self.psi.len()
    }

    pub fn n(&self) -> usize {
        self.nu + self.nz()
    }

    /// `ǧ = max |g|` over the admissible gain interval.
    pub fn gain_check(&self) -> f64 {
        self.gain_lo.abs().max(self.gain_hi.abs())
    }

    /// Uniform grid of `points` gains over `[g_lo, g_hi]`.
    pub fn gain_grid(&self, points: usize) -> Vec<f64> {
        if points <= 1 || self.gain_lo == self.gain_hi {
            return vec![self.gain];
        }
        (0..points)
            .map(|k| self.gain_lo + (self.gain_hi - self.gain_lo) * k as f64 / (points - 1) as f64)
            .collect()
    }

    /// Returns `(ẋ, ż, y)` for input `u` and disturbance value `d` at time `t`.
    pub fn deriv(&self, x: &[f64], z: &[f64], u: f64, d: f64, t: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        check_len("x", x, self.nu)?;
        check_len("z", z, self.nz())?;
        if !x.iter().chain(z).all(|v| v.is_finite()) || !u.is_finite() || !d.is_finite() {
            return Err(Error::InvalidArgument("non-finite plant state or input".into()));
        }
        let mut xdot = vec![0.0; self.nu];
        xdot[..self.nu - 1].copy_from_slice(&x[1..]);
        xdot[self.nu - 1] = dot(&self.phi, x)
            + dot(&self.psi, z)
            + self.nonlinearity.value(x, z, t)
            + self.gain * (u + d);
        let mut zdot = self.s.matvec(z);
        for (zd, gi) in zdot.iter_mut().zip(&self.coupling) {
            *zd += gi * x[0];
        }
        Ok((xdot, zdot, x[0]))
    }
}

impl NominalModel {
    pub fn new(phi: Vec<f64>, psi: Vec<f64>, gain: f64, s: DenseMatrix, coupling: Vec<f64>) -> Result<Self> {
        let nz = psi.len();
        check_len("nominal G", &coupling, nz)?;
        if s.shape() != (nz, nz) {
            return Err(Error::Config(format!(
                "nominal S has shape {:?}, expected {nz}x{nz}",
                s.shape()
            )));
        }
        check_finite("nominal phi", &phi)?;
        check_finite("nominal psi", &psi)?;
        check_finite("nominal G", &coupling)?;
        if gain == 0.0 || !gain.is_finite() {
            return Err(Error::Config(format!("nominal gain must be nonzero and finite, got {gain}")));
        }
        check_hurwitz("nominal S", &s)?;
        Ok(Self {
            phi,
            psi,
            gain,
            s,
            coupling,
        })
    }

    pub fn check_against(&self, plant: &PlantModel) -> Result<()> {
        if self.phi.len() != plant.nu || self.psi.len() != plant.nz() {
            return Err(Error::Config(format!(
                "nominal model dimensions (nu={}, n-nu={}) do not match plant (nu={}, n-nu={})",
                self.phi.len(),
                self.psi.len(),
                plant.nu,
                plant.nz()
            )));
        }
        Ok(())
    }
}

impl OuterController {
    pub fn new(j: DenseMatrix, k: Vec<f64>, l: Vec<f64>, d: f64) -> Result<Self> {
        let nc = k.len();
        if j.shape() != (nc, nc) {
            return Err(Error::Config(format!("J has shape {:?}, expected {nc}x{nc}", j.shape())));
        }
        check_len("L", &l, nc)?;
        check_finite("K", &k)?;
        check_finite("L", &l)?;
        if !d.is_finite() || !j.is_finite() {
            return Err(Error::Config("controller has non-finite entries".into()));
        }
        Ok(Self { j, k, l, d })
    }

    /// Static gain controller `u = D(r − y)`.
    pub fn static_gain(d: f64) -> Self {
        Self {
            j: DenseMatrix::zeros(0, 0),
            k: Vec::new(),
            l: Vec::new(),
            d,
        }
    }

    pub fn nc(&self) -> usize {
        self.k.len()
    }

    /// Returns `(θ̇, u_r)` for the measured output `y_meas`.
    pub fn eval(&self, theta: &[f64], y_meas: f64, r: f64) -> Result<(Vec<f64>, f64)> {
        check_len("theta", theta, self.nc())?;
        let err = r - y_meas;
        let mut theta_dot = self.j.matvec(theta);
        for (td, ki) in theta_dot.iter_mut().zip(&self.k) {
            *td += ki * err;
        }
        Ok((theta_dot, dot(&self.l, theta) + self.d * err))
    }
}

/// Index layout of `χ = [x; z̄; θ; z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StateLayout {
    pub nu: usize,
    pub nz: usize,
    pub nc: usize,
}

impl StateLayout {
    pub fn n_e(&self) -> usize {
        self.nu + 2 * self.nz + self.nc
    }

    pub fn x(&self) -> std::ops::Range<usize> {
        0..self.nu
    }

    pub fn z_bar(&self) -> std::ops::Range<usize> {
        self.nu..self.nu + self.nz
    }

    pub fn theta(&self) -> std::ops::Range<usize> {
        self.nu + self.nz..self.nu + self.nz + self.nc
    }

    pub fn z(&self) -> std::ops::Range<usize> {
        self.nu + self.nz + self.nc..self.n_e()
    }
}

/// Nominal closed loop augmented with the true internal dynamics:
/// `χ̇_n = A_s χ_n + B r`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedNominal {
    pub a_s: DenseMatrix,
    pub b: Vec<f64>,
    pub layout: StateLayout,
    /// Largest eigenvalue real part of `A_s`.
    pub margin: f64,
}

impl AugmentedNominal {
    pub fn n_e(&self) -> usize {
        self.layout.n_e()
    }

    /// `A_s χ + B r`.
    pub fn flow(&self, chi: &[f64], r: f64) -> Vec<f64> {
        let mut out = self.a_s.matvec(chi);
        out.iter_mut().zip(&self.b).for_each(|(o, b)| *o += b * r);
        out
    }
}

/// Assembles `A_s` and `B` in the order `[x; z̄; θ; z]`.
pub fn assemble_as_b(plant: &PlantModel, nom: &NominalModel, ctrl: &OuterController) -> Result<AugmentedNominal> {
    nom.check_against(plant)?;
    let layout = StateLayout {
        nu: plant.nu,
        nz: plant.nz(),
        nc: ctrl.nc(),
    };
    let n_e = layout.n_e();
    let nu = layout.nu;
    let mut a = DenseMatrix::zeros(n_e, n_e);
    let mut b = vec![0.0; n_e];

    for i in 0..nu - 1 {
        a[(i, i + 1)] = 1.0;
    }
    let row = nu - 1;
    for (j, p) in nom.phi.iter().enumerate() {
        a[(row, j)] += p;
    }
    a[(row, 0)] -= nom.gain * ctrl.d;
    for (j, p) in nom.psi.iter().enumerate() {
        a[(row, layout.z_bar().start + j)] += p;
    }
    for (j, lj) in ctrl.l.iter().enumerate() {
        a[(row, layout.theta().start + j)] += nom.gain * lj;
    }
    b[row] = nom.gain * ctrl.d;

    let zb = layout.z_bar().start;
    a.set_block(zb, zb, &nom.s);
    for (i, gi) in nom.coupling.iter().enumerate() {
        a[(zb + i, 0)] += gi;
    }

    let th = layout.theta().start;
    if layout.nc > 0 {
        a.set_block(th, th, &ctrl.j);
    }
    for (i, ki) in ctrl.k.iter().enumerate() {
        a[(th + i, 0)] -= ki;
        b[th + i] = *ki;
    }

    let zs = layout.z().start;
    a.set_block(zs, zs, &plant.s);
    for (i, gi) in plant.coupling.iter().enumerate() {
        a[(zs + i, 0)] += gi;
    }

    let verdict = is_hurwitz(&a)?;
    if !verdict.hurwitz {
        return Err(Error::Config(format!(
            "nominal closed loop is not asymptotically stable: A_s has an eigenvalue with real part {:.6e}",
            verdict.margin
        )));
    }
    Ok(AugmentedNominal {
        a_s: a,
        b,
        layout,
        margin: verdict.margin,
    })
}

/// Lumped disturbance seen by the observer:
/// `((φ−φ̄)ᵀx + ψᵀz − ψ̄ᵀz̄ + f_d + g·d + (g−ḡ)u_r) / g`.
#[allow(clippy::too_many_arguments)]
pub fn lumped_disturbance(
    plant: &PlantModel,
    nom: &NominalModel,
    x: &[f64],
    z: &[f64],
    z_bar: &[f64],
    u_r: f64,
    d: f64,
    t: f64,
) -> f64 {
    let g = plant.gain;
    let mismatch: f64 = plant.phi.iter().zip(&nom.phi).zip(x).map(|((p, pb), xi)| (p - pb) * xi).sum();
    (mismatch + dot(&plant.psi, z) - dot(&nom.psi, z_bar)
        + plant.nonlinearity.value(x, z, t)
        + g * d
        + (g - nom.gain) * u_r)
        / g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{Term, TermArg, TermFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: usize, cols: usize, e: &[f64]) -> DenseMatrix {
        DenseMatrix::from_rows(rows, cols, e).unwrap()
    }

    fn simple_plant(nu: usize) -> PlantModel {
        PlantModel::new(
            nu,
            vec![0.0; nu],
            vec![0.0],
            m(1, 1, &[-1.0]),
            vec![1.0],
            1.0,
            (0.5, 1.5),
            Nonlinearity::none(),
        )
        .unwrap()
    }

    fn bench_parts() -> (PlantModel, NominalModel, OuterController) {
        let plant = PlantModel::new(
            2,
            vec![-1.0, -1.5],
            vec![0.5],
            m(1, 1, &[-2.0]),
            vec![1.0],
            1.1,
            (0.8, 1.2),
            Nonlinearity::new(vec![Term {
                func: TermFn::Sin,
                coeff: 0.1,
                gain: 1.0,
                arg: TermArg::X(0),
            }]),
        )
        .unwrap();
        let nom = NominalModel::new(vec![-1.0, -2.0], vec![0.4], 1.0, m(1, 1, &[-2.0]), vec![1.0]).unwrap();
        let ctrl = OuterController::new(m(1, 1, &[0.0]), vec![1.0], vec![2.0], 3.0).unwrap();
        (plant, nom, ctrl)
    }

    #[test]
    fn plant_equilibrium() {
        let p = simple_plant(2);
        let (xd, zd, y) = p.deriv(&[0.0, 0.0], &[0.0], 0.0, 0.0, 0.0).unwrap();
        assert_eq!((xd, zd, y), (vec![0.0, 0.0], vec![0.0], 0.0));
    }

    #[test]
    fn plant_companion_form() {
        let p = simple_plant(2);
        let (xd, _, y) = p.deriv(&[1.0, 2.0], &[0.0], 3.0, 0.0, 0.0).unwrap();
        assert_eq!(xd, vec![2.0, 3.0]);
        assert_eq!(y, 1.0);
    }

    #[test]
    fn plant_internal_dynamics() {
        let p = simple_plant(1);
        let (_, zd, _) = p.deriv(&[2.0], &[1.0], 0.0, 0.0, 0.0).unwrap();
        assert_eq!(zd, vec![1.0]);
        assert!(p.deriv(&[f64::NAN], &[1.0], 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn plant_rejects_bad_gain_bounds() {
        let make = |g: f64, lo: f64, hi: f64| {
            PlantModel::new(1, vec![0.0], vec![0.0], m(1, 1, &[-1.0]), vec![1.0], g, (lo, hi), Nonlinearity::none())
        };
        assert!(make(1.0, -1.0, 2.0).is_err());
        assert!(make(3.0, 0.5, 2.0).is_err());
        assert!(make(1.0, 0.0, 2.0).is_err());
        assert!(make(-1.0, -2.0, -0.5).is_ok());
        let unstable = PlantModel::new(1, vec![0.0], vec![0.0], m(1, 1, &[1.0]), vec![1.0], 1.0, (0.5, 2.0), Nonlinearity::none());
        assert!(matches!(unstable, Err(Error::Config(_))));
    }

    #[test]
    fn controller_examples() {
        let c = OuterController::static_gain(2.0);
        let (td, u) = c.eval(&[], 0.5, 1.0).unwrap();
        assert!(td.is_empty());
        assert_eq!(u, 1.0);
        let c = OuterController::new(m(1, 1, &[-1.0]), vec![1.0], vec![1.0], 0.0).unwrap();
        assert_eq!(c.eval(&[0.0], 0.0, 1.0).unwrap(), (vec![1.0], 0.0));
        let c = OuterController::new(m(1, 1, &[-1.0]), vec![1.0], vec![3.0], 2.0).unwrap();
        assert_eq!(c.eval(&[0.0], 0.7, 0.7).unwrap(), (vec![0.0], 0.0));
    }

    #[test]
    fn augmented_flow_matches_component_equations() {
        let (plant, nom, ctrl) = bench_parts();
        let aug = assemble_as_b(&plant, &nom, &ctrl).unwrap();
        assert!(aug.margin < 0.0);
        let lay = aug.layout;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(aug.flow(&vec![0.0; aug.n_e()], 0.0).iter().all(|v| *v == 0.0));
        for _ in 0..50 {
            let chi: Vec<f64> = (0..aug.n_e()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let r: f64 = rng.gen_range(-2.0..2.0);
            let x = &chi[lay.x()];
            let zb = &chi[lay.z_bar()];
            let th = &chi[lay.theta()];
            let z = &chi[lay.z()];
            let (thd, u) = ctrl.eval(th, x[0], r).unwrap();
            let mut want = vec![x[1], dot(&nom.phi, x) + dot(&nom.psi, zb) + nom.gain * u];
            want.extend(nom.s.matvec(zb).iter().zip(&nom.coupling).map(|(a, g)| a + g * x[0]));
            want.extend(thd);
            want.extend(plant.s.matvec(z).iter().zip(&plant.coupling).map(|(a, g)| a + g * x[0]));
            let got = aug.flow(&chi, r);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unstable_nominal_loop_is_rejected() {
        let (plant, nom, _) = bench_parts();
        let ctrl = OuterController::static_gain(-10.0);
        assert!(matches!(assemble_as_b(&plant, &nom, &ctrl), Err(Error::Config(_))));
    }

    #[test]
    fn lumped_disturbance_examples() {
        let p = simple_plant(1);
        let nom = NominalModel::new(vec![0.0], vec![0.0], 1.0, m(1, 1, &[-1.0]), vec![1.0]).unwrap();
        assert_eq!(lumped_disturbance(&p, &nom, &[0.3], &[0.2], &[0.1], 0.5, 0.0, 0.0), 0.0);
        let p2 = PlantModel::new(1, vec![0.0], vec![0.0], m(1, 1, &[-1.0]), vec![1.0], 2.0, (1.0, 3.0), Nonlinearity::none()).unwrap();
        assert_eq!(lumped_disturbance(&p2, &nom, &[0.0], &[0.0], &[0.0], 3.0, 0.0, 0.0), 1.5);
        let t: f64 = 0.7;
        assert_eq!(lumped_disturbance(&p, &nom, &[0.0], &[0.0], &[0.0], 1.0, t.sin(), t), t.sin());
    }
}
