//! Benchmark systems in semilinear form `x' = A(x) x + B(x) u` with
//! quadratic cost weights and a sampling box.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

type MatrixMap = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Control-affine dynamics factored as `x' = A(x) x + B(x) u`, together with
/// the cost weights `Q`, `R` and the box the training states are drawn from.
pub struct SemilinearSystem {
    name: String,
    n: usize,
    m: usize,
    eval_a: MatrixMap,
    eval_b: MatrixMap,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    domain_lower: DVector<f64>,
    domain_upper: DVector<f64>,
}

impl SemilinearSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        m: usize,
        eval_a: MatrixMap,
        eval_b: MatrixMap,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        domain_lower: DVector<f64>,
        domain_upper: DVector<f64>,
    ) -> Result<Self, ModelError> {
        if q.nrows() != n || q.ncols() != n {
            return Err(ModelError::DimensionMismatch(format!(
                "Q must be {n}x{n}, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(ModelError::DimensionMismatch(format!(
                "R must be {m}x{m}, got {}x{}",
                r.nrows(),
                r.ncols()
            )));
        }
        if domain_lower.len() != n || domain_upper.len() != n {
            return Err(ModelError::DimensionMismatch(
                "domain bounds must have length n".into(),
            ));
        }
        if domain_lower
            .iter()
            .zip(domain_upper.iter())
            .any(|(lo, hi)| lo >= hi)
        {
            return Err(ModelError::InvalidConfig(
                "domain_lower must be strictly below domain_upper".into(),
            ));
        }
        Ok(SemilinearSystem {
            name: name.into(),
            n,
            m,
            eval_a,
            eval_b,
            q,
            r,
            domain_lower,
            domain_upper,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.m
    }

    pub fn eval_a(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.eval_a)(x)
    }

    pub fn eval_b(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.eval_b)(x)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn domain_lower(&self) -> &DVector<f64> {
        &self.domain_lower
    }

    pub fn domain_upper(&self) -> &DVector<f64> {
        &self.domain_upper
    }

    /// Uncontrolled drift `f(x) = A(x) x`.
    pub fn drift(&self, x: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
        if x.len() != self.n {
            return Err(ModelError::DimensionMismatch(format!(
                "state must have length {}, got {}",
                self.n,
                x.len()
            )));
        }
        Ok(self.eval_a(x) * x)
    }
}

impl std::fmt::Debug for SemilinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemilinearSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

/// Velocity-alignment interaction weight `1 / (1 + ||y_i - y_j||^2)`.
pub fn interaction_kernel(y_i: &[f64], y_j: &[f64]) -> Result<f64, ModelError> {
    if y_i.len() != y_j.len() {
        return Err(ModelError::DimensionMismatch(format!(
            "positions have lengths {} and {}",
            y_i.len(),
            y_j.len()
        )));
    }
    let dist_sq: f64 = y_i
        .iter()
        .zip(y_j.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 / (1.0 + dist_sq))
}

/// Consensus (flocking) model: `N_a` agents on a line with positions and
/// velocities, velocity coupling through [`interaction_kernel`], one control
/// per agent acting on its velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuckerSmaleConfig {
    pub agents: usize,
    pub box_half_width: f64,
}

impl Default for CuckerSmaleConfig {
    fn default() -> Self {
        CuckerSmaleConfig {
            agents: 20,
            box_half_width: 3.0,
        }
    }
}

/// Velocity-coupling matrix: off-diagonal `P(y_i, y_j) / N_a`, diagonal
/// minus the sum of the off-diagonal row entries, so rows sum to zero and
/// `A(y) v` reproduces the pairwise alignment term.
fn alignment_matrix(y: &[f64], agents: usize) -> DMatrix<f64> {
    let inv_na = 1.0 / agents as f64;
    let mut a = DMatrix::<f64>::zeros(agents, agents);
    for i in 0..agents {
        let mut diag = 0.0;
        for j in 0..agents {
            if i == j {
                continue;
            }
            let p = interaction_kernel(&y[i..=i], &y[j..=j]).expect("scalar positions");
            a[(i, j)] = inv_na * p;
            diag -= inv_na * p;
        }
        a[(i, i)] = diag;
    }
    a
}

pub fn cucker_smale_system(cfg: &CuckerSmaleConfig) -> Result<SemilinearSystem, ModelError> {
    if cfg.agents < 2 {
        return Err(ModelError::InvalidConfig(
            "consensus model needs at least 2 agents".into(),
        ));
    }
    if !(cfg.box_half_width > 0.0) {
        return Err(ModelError::InvalidConfig(
            "box_half_width must be positive".into(),
        ));
    }
    let na = cfg.agents;
    let n = 2 * na;
    let m = na;

    let eval_a: MatrixMap = Box::new(move |x: &DVector<f64>| {
        let mut a = DMatrix::<f64>::zeros(2 * na, 2 * na);
        for i in 0..na {
            a[(i, na + i)] = 1.0;
        }
        let y = x.as_slice()[..na].to_vec();
        a.view_mut((na, na), (na, na))
            .copy_from(&alignment_matrix(&y, na));
        a
    });

    let mut b = DMatrix::<f64>::zeros(n, m);
    for i in 0..na {
        b[(na + i, i)] = 1.0;
    }
    let eval_b: MatrixMap = Box::new(move |_x: &DVector<f64>| b.clone());

    let q = DMatrix::<f64>::identity(n, n) * (1.0 / na as f64);
    let r = DMatrix::<f64>::identity(m, m);
    let lower = DVector::from_element(n, -cfg.box_half_width);
    let upper = DVector::from_element(n, cfg.box_half_width);

    SemilinearSystem::new("cucker_smale", n, m, eval_a, eval_b, q, r, lower, upper)
}

/// Sign of the cubic reaction term `x (1 +- x^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CubicSign {
    /// `x (1 - x^2)`: bistable dynamics with stable rest states at +-1.
    Minus,
    /// `x (1 + x^2)`: superlinear growth away from the origin.
    Plus,
}

/// Reaction-diffusion model on `[0, 1]` with zero-flux boundaries,
/// discretized on a uniform grid; a single scalar control acts on the grid
/// points inside `[omega_lo, omega_hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AllenCahnConfig {
    pub grid_points: usize,
    pub diffusion: f64,
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub control_weight: f64,
    pub box_half_width: f64,
    pub cubic_sign: CubicSign,
}

impl Default for AllenCahnConfig {
    fn default() -> Self {
        AllenCahnConfig {
            grid_points: 51,
            diffusion: 0.1,
            omega_lo: 0.6,
            omega_hi: 0.9,
            control_weight: 0.1,
            box_half_width: 2.0,
            cubic_sign: CubicSign::Minus,
        }
    }
}

/// Zero-flux (reflecting) finite-difference Laplacian on a uniform grid
/// over `[0, 1]`; every row sums to zero.
fn neumann_laplacian(n: usize) -> DMatrix<f64> {
    let h = 1.0 / (n - 1) as f64;
    let w = 1.0 / (h * h);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        if i == 0 {
            l[(0, 0)] = -2.0 * w;
            l[(0, 1)] = 2.0 * w;
        } else if i == n - 1 {
            l[(n - 1, n - 2)] = 2.0 * w;
            l[(n - 1, n - 1)] = -2.0 * w;
        } else {
            l[(i, i - 1)] = w;
            l[(i, i)] = -2.0 * w;
            l[(i, i + 1)] = w;
        }
    }
    l
}

pub fn allen_cahn_system(cfg: &AllenCahnConfig) -> Result<SemilinearSystem, ModelError> {
    if cfg.grid_points < 3 {
        return Err(ModelError::InvalidConfig(
            "grid must have at least 3 points".into(),
        ));
    }
    if !(cfg.diffusion > 0.0) {
        return Err(ModelError::InvalidConfig("diffusion must be positive".into()));
    }
    if !(0.0 <= cfg.omega_lo && cfg.omega_lo < cfg.omega_hi && cfg.omega_hi <= 1.0) {
        return Err(ModelError::InvalidConfig(
            "actuator interval must satisfy 0 <= lo < hi <= 1".into(),
        ));
    }
    if !(cfg.control_weight > 0.0) {
        return Err(ModelError::InvalidConfig(
            "control_weight must be positive".into(),
        ));
    }
    if !(cfg.box_half_width > 0.0) {
        return Err(ModelError::InvalidConfig(
            "box_half_width must be positive".into(),
        ));
    }
    let n = cfg.grid_points;
    let h = 1.0 / (n - 1) as f64;
    let laplacian = neumann_laplacian(n) * cfg.diffusion;
    let cubic = match cfg.cubic_sign {
        CubicSign::Minus => -1.0,
        CubicSign::Plus => 1.0,
    };

    let eval_a: MatrixMap = Box::new(move |x: &DVector<f64>| {
        let mut a = laplacian.clone();
        for i in 0..x.len() {
            a[(i, i)] += 1.0 + cubic * x[i] * x[i];
        }
        a
    });

    // Indicator column of the actuator interval, endpoints included.
    let mut b = DMatrix::<f64>::zeros(n, 1);
    for i in 0..n {
        let xi = i as f64 * h;
        if xi >= cfg.omega_lo && xi <= cfg.omega_hi {
            b[(i, 0)] = 1.0;
        }
    }
    let eval_b: MatrixMap = Box::new(move |_x: &DVector<f64>| b.clone());

    // State weight h * I keeps the discrete cost close to the integral
    // norm regardless of grid resolution.
    let q = DMatrix::<f64>::identity(n, n) * h;
    let r = DMatrix::from_element(1, 1, cfg.control_weight);
    let lower = DVector::from_element(n, -cfg.box_half_width);
    let upper = DVector::from_element(n, cfg.box_half_width);

    SemilinearSystem::new("allen_cahn", n, 1, eval_a, eval_b, q, r, lower, upper)
}

/// Serializable description of a shipped model, used in dataset manifests
/// and run configurations so a system can be rebuilt from a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    CuckerSmale(CuckerSmaleConfig),
    AllenCahn(AllenCahnConfig),
}

impl ModelSpec {
    pub fn build(&self) -> Result<SemilinearSystem, ModelError> {
        match self {
            ModelSpec::CuckerSmale(cfg) => cucker_smale_system(cfg),
            ModelSpec::AllenCahn(cfg) => allen_cahn_system(cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::Prng;

    fn random_state(sys: &SemilinearSystem, rng: &mut Prng) -> DVector<f64> {
        DVector::from_fn(sys.state_dim(), |i, _| {
            rng.uniform_in(sys.domain_lower()[i], sys.domain_upper()[i])
        })
    }

    /// Pairwise alignment dynamics written directly from the agent model,
    /// bypassing the semilinear factorization.
    fn cucker_smale_drift_direct(x: &DVector<f64>, na: usize) -> DVector<f64> {
        let y = &x.as_slice()[..na];
        let v = &x.as_slice()[na..];
        let mut out = DVector::<f64>::zeros(2 * na);
        for i in 0..na {
            out[i] = v[i];
            let mut acc = 0.0;
            for j in 0..na {
                let diff = y[i] - y[j];
                acc += (v[j] - v[i]) / (1.0 + diff * diff);
            }
            out[na + i] = acc / na as f64;
        }
        out
    }

    /// Reaction-diffusion right-hand side coded directly from the stencil.
    fn allen_cahn_drift_direct(x: &DVector<f64>, cfg: &AllenCahnConfig) -> DVector<f64> {
        let n = cfg.grid_points;
        let h = 1.0 / (n - 1) as f64;
        let w = cfg.diffusion / (h * h);
        let cubic = match cfg.cubic_sign {
            CubicSign::Minus => -1.0,
            CubicSign::Plus => 1.0,
        };
        DVector::from_fn(n, |i, _| {
            let lap = if i == 0 {
                2.0 * w * (x[1] - x[0])
            } else if i == n - 1 {
                2.0 * w * (x[n - 2] - x[n - 1])
            } else {
                w * (x[i - 1] - 2.0 * x[i] + x[i + 1])
            };
            lap + x[i] * (1.0 + cubic * x[i] * x[i])
        })
    }

    #[test]
    fn kernel_values() {
        assert_eq!(interaction_kernel(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!((interaction_kernel(&[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((interaction_kernel(&[0.0], &[3.0]).unwrap() - 0.1).abs() < 1e-15);
        assert!(interaction_kernel(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn alignment_rows_sum_to_zero() {
        let mut rng = Prng::seeded(2);
        let cfg = CuckerSmaleConfig::default();
        let sys = cucker_smale_system(&cfg).unwrap();
        for _ in 0..100 {
            let x = random_state(&sys, &mut rng);
            let a = sys.eval_a(&x);
            let na = cfg.agents;
            for i in 0..na {
                let row_sum: f64 = (0..na).map(|j| a[(na + i, na + j)]).sum();
                assert!(row_sum.abs() <= 1e-13, "row {i} sums to {row_sum}");
            }
        }
    }

    #[test]
    fn equal_velocities_do_not_accelerate() {
        let cfg = CuckerSmaleConfig::default();
        let sys = cucker_smale_system(&cfg).unwrap();
        let na = cfg.agents;
        let mut x = DVector::<f64>::zeros(2 * na);
        for i in 0..na {
            x[i] = (i as f64) * 0.3 - 2.0;
            x[na + i] = 1.7;
        }
        let f = sys.drift(&x).unwrap();
        for i in 0..na {
            assert!((f[i] - 1.7).abs() < 1e-14); // positions move with v
            assert!(f[na + i].abs() < 1e-13, "acceleration {}", f[na + i]);
        }
    }

    #[test]
    fn two_agent_alignment_matrix_by_hand() {
        let a = alignment_matrix(&[0.0, 1.0], 2);
        // P(0,1) = 1/2; expect (1/2) * [[-1/2, 1/2], [1/2, -1/2]].
        let expect = DMatrix::from_row_slice(2, 2, &[-0.25, 0.25, 0.25, -0.25]);
        assert!((a - expect).norm() < 1e-15);
    }

    #[test]
    fn cucker_smale_semilinear_consistency() {
        let mut rng = Prng::seeded(3);
        let cfg = CuckerSmaleConfig::default();
        let sys = cucker_smale_system(&cfg).unwrap();
        for _ in 0..100 {
            let x = random_state(&sys, &mut rng);
            let via_factorization = sys.drift(&x).unwrap();
            let direct = cucker_smale_drift_direct(&x, cfg.agents);
            let rel = (&via_factorization - &direct).norm() / direct.norm().max(1e-30);
            assert!(rel < 1e-12, "drift mismatch {rel}");
        }
    }

    #[test]
    fn cucker_smale_shapes_and_weights() {
        let cfg = CuckerSmaleConfig::default();
        let sys = cucker_smale_system(&cfg).unwrap();
        assert_eq!(sys.state_dim(), 40);
        assert_eq!(sys.control_dim(), 20);
        assert!((sys.q()[(0, 0)] - 0.05).abs() < 1e-15);
        assert_eq!(sys.r()[(0, 0)], 1.0);
        assert_eq!(sys.domain_lower()[0], -3.0);
        assert_eq!(sys.domain_upper()[39], 3.0);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let l = neumann_laplacian(51);
        for i in 0..51 {
            let s: f64 = (0..51).map(|j| l[(i, j)]).sum();
            assert_eq!(s, 0.0, "row {i}");
        }
    }

    #[test]
    fn allen_cahn_equilibria_have_zero_drift() {
        let cfg = AllenCahnConfig::default();
        let sys = allen_cahn_system(&cfg).unwrap();
        for value in [-1.0, 0.0, 1.0] {
            let x = DVector::from_element(51, value);
            let f = sys.drift(&x).unwrap();
            assert_eq!(f.norm(), 0.0, "drift at x = {value} not exactly zero");
        }
    }

    #[test]
    fn allen_cahn_constant_half_state() {
        let cfg = AllenCahnConfig::default();
        let sys = allen_cahn_system(&cfg).unwrap();
        let x = DVector::from_element(51, 0.5);
        let f = sys.drift(&x).unwrap();
        for i in 0..51 {
            assert!((f[i] - 0.375).abs() < 1e-13, "entry {i} is {}", f[i]);
        }
    }

    #[test]
    fn allen_cahn_semilinear_consistency() {
        let mut rng = Prng::seeded(4);
        for sign in [CubicSign::Minus, CubicSign::Plus] {
            let cfg = AllenCahnConfig {
                cubic_sign: sign,
                ..AllenCahnConfig::default()
            };
            let sys = allen_cahn_system(&cfg).unwrap();
            for _ in 0..100 {
                let x = random_state(&sys, &mut rng);
                let via_factorization = sys.drift(&x).unwrap();
                let direct = allen_cahn_drift_direct(&x, &cfg);
                let rel = (&via_factorization - &direct).norm() / direct.norm().max(1e-30);
                assert!(rel < 1e-12, "drift mismatch {rel}");
            }
        }
    }

    #[test]
    fn allen_cahn_actuator_support() {
        let cfg = AllenCahnConfig::default();
        let sys = allen_cahn_system(&cfg).unwrap();
        let b = sys.eval_b(&DVector::zeros(51));
        // h = 0.02: interval [0.6, 0.9] covers grid indices 30..=45.
        for i in 0..51 {
            let expected = if (30..=45).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(b[(i, 0)], expected, "index {i}");
        }
    }

    #[test]
    fn control_operators_are_constant() {
        let mut rng = Prng::seeded(5);
        let systems = [
            cucker_smale_system(&CuckerSmaleConfig::default()).unwrap(),
            allen_cahn_system(&AllenCahnConfig::default()).unwrap(),
        ];
        for sys in &systems {
            let x1 = random_state(sys, &mut rng);
            let x2 = random_state(sys, &mut rng);
            assert_eq!(sys.eval_b(&x1), sys.eval_b(&x2), "{}", sys.name());
        }
    }

    #[test]
    fn zero_state_has_zero_drift() {
        let systems = [
            cucker_smale_system(&CuckerSmaleConfig::default()).unwrap(),
            allen_cahn_system(&AllenCahnConfig::default()).unwrap(),
        ];
        for sys in &systems {
            let zero = DVector::zeros(sys.state_dim());
            assert_eq!(sys.drift(&zero).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(cucker_smale_system(&CuckerSmaleConfig {
            agents: 1,
            ..CuckerSmaleConfig::default()
        })
        .is_err());
        assert!(allen_cahn_system(&AllenCahnConfig {
            omega_lo: 0.9,
            omega_hi: 0.6,
            ..AllenCahnConfig::default()
        })
        .is_err());
        assert!(allen_cahn_system(&AllenCahnConfig {
            diffusion: 0.0,
            ..AllenCahnConfig::default()
        })
        .is_err());
    }
}
