//! Run configuration: a TOML file resolved into mesh, target, form, functional
//! parameters, initial state and solver options.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use evalexpr::{build_operator_tree, ContextWithMutableVariables, DefaultNumericTypes, HashMapContext, Node, Value};
use hsphere::solve::{ContinuationOptions, DescentOptions, MinmaxOptions, NewtonOptions, SweepoutGrid};
use hsphere::spectrum::{BOmegaOptions, SpectrumOptions};
use hsphere::{DomainMesh, FunctionalParams, MapState, TargetKind, TargetManifold, TwoFormField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mesh: MeshSpec,
    pub target: TargetKind,
    #[serde(default)]
    pub form: FormSpec,
    #[serde(default)]
    pub params: ParamsSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub descent: DescentOptions,
    #[serde(default)]
    pub newton: NewtonOptions,
    #[serde(default)]
    pub solve: SolveSpec,
    #[serde(default)]
    pub minmax: MinmaxSpec,
    #[serde(default)]
    pub continuation: ContinuationSpec,
    #[serde(default)]
    pub spectrum: SpectrumOptions,
    #[serde(default)]
    pub bomega: BOmegaOptions,
    #[serde(default)]
    pub diagnose: DiagnoseSpec,
    #[serde(default)]
    pub scan: ScanSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSpec {
    pub subdivisions: u32,
}

impl Default for MeshSpec {
    fn default() -> Self {
        Self { subdivisions: 3 }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormSpec {
    #[default]
    Zero,
    Volume {
        #[serde(default = "one")]
        scale: f64,
    },
    Cmc {
        h0: f64,
    },
    Cosine {
        amplitude: f64,
        frequency: f64,
    },
    /// Coefficients `ω_ij(y)` for `i < j` as expressions in `y0, y1, …`.
    Expression {
        entries: Vec<FormEntry>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormEntry {
    pub i: usize,
    pub j: usize,
    pub expr: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsSpec {
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    /// Decreasing α values for `continue`; defaults to `1 + 2^{−j}`, `j = 1..=6`.
    pub schedule: Option<Vec<f64>>,
}

impl Default for ParamsSpec {
    fn default() -> Self {
        Self { alpha: 1.0, lambda: 1.0, tau: 1.0, schedule: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Identity,
    /// Constant map; the point defaults to the projection of `e_0`.
    Constant {
        #[serde(default)]
        point: Option<Vec<f64>>,
    },
    /// Identity plus a seeded random field of odd polynomials, projected.
    Perturbed {
        amplitude: f64,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSpec {
    /// Newton refinement after descent.
    pub refine: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinmaxSpec {
    pub samples: usize,
    /// Largest sphere radius of the flat latitude family.
    pub r_max: f64,
    /// Seeded perturbation of the interior samples.
    pub perturbation: f64,
    /// Morse index of the critical state.
    pub index: bool,
    pub options: MinmaxOptions,
}

impl Default for MinmaxSpec {
    fn default() -> Self {
        Self { samples: 17, r_max: 2.0, perturbation: 0.0, index: false, options: MinmaxOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContinuationStart {
    /// The configured initial state.
    Init,
    /// The min-max critical state at the first schedule value.
    Minmax,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSpec {
    pub start: ContinuationStart,
    pub options: ContinuationOptions,
}

impl Default for ContinuationSpec {
    fn default() -> Self {
        Self { start: ContinuationStart::Init, options: ContinuationOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSpec {
    /// Disk center on the domain sphere (snapped to the nearest vertex).
    pub center: [f64; 3],
    pub radii: Vec<f64>,
    /// Constant of the curvature condition for the energy bound check.
    pub c0: Option<f64>,
}

impl Default for DiagnoseSpec {
    fn default() -> Self {
        Self { center: [0.0, 0.0, 1.0], radii: vec![0.4, 0.8, 1.2], c0: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSpec {
    pub family: ScanFamily,
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanFamily {
    /// The latitude family of the `minmax` section.
    Latitude,
    /// The initial state alone.
    Init,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self { family: ScanFamily::Latitude, alphas: vec![1.0], lambdas: vec![0.5, 1.0, 1.5, 2.0, 2.5] }
    }
}

fn one() -> f64 {
    1.0
}

/// Fully built objects of a configuration.
pub struct Setup {
    pub mesh: DomainMesh,
    pub target: TargetManifold,
    pub form: TwoFormField,
    pub params: FunctionalParams,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
    }

    /// Range checks that do not need the built objects.
    pub fn validate(&self) -> Result<()> {
        if self.mesh.subdivisions > 8 {
            bail!("mesh.subdivisions = {} must be in [0, 8]", self.mesh.subdivisions);
        }
        let p = &self.params;
        if !(p.alpha >= 1.0) {
            bail!("params.alpha = {} must be >= 1", p.alpha);
        }
        if !(p.lambda >= 0.0) {
            bail!("params.lambda = {} must be >= 0", p.lambda);
        }
        if let Some(s) = &p.schedule {
            if s.is_empty() || s.iter().any(|a| !(*a >= 1.0)) || s.windows(2).any(|w| w[1] >= w[0]) {
                bail!("params.schedule must be non-empty, >= 1 and strictly decreasing");
            }
        }
        if self.diagnose.radii.is_empty() {
            bail!("diagnose.radii must not be empty");
        }
        if self.scan.alphas.iter().any(|a| !(*a >= 1.0)) {
            bail!("scan.alphas must all be >= 1");
        }
        Ok(())
    }

    pub fn schedule(&self) -> Vec<f64> {
        self.params.schedule.clone().unwrap_or_else(|| hsphere::solve::default_schedule(6))
    }

    pub fn setup(&self) -> Result<Setup> {
        self.validate()?;
        let mesh = DomainMesh::icosphere(self.mesh.subdivisions)?;
        let target = TargetManifold::new(self.target.clone())?;
        let k = target.ambient_dim();
        let form = build_form(&self.form, k)?;
        let params = FunctionalParams::new(self.params.alpha, self.params.lambda, self.params.tau)?;
        Ok(Setup { mesh, target, form, params })
    }

    pub fn initial_state(&self, s: &Setup) -> Result<MapState> {
        let k = s.target.ambient_dim();
        match &self.init {
            InitSpec::Identity => Ok(MapState::identity(&s.mesh, &s.target)?),
            InitSpec::Constant { point } => {
                let p = match point {
                    Some(p) => {
                        if p.len() != k {
                            bail!("init.point has {} coordinates, target needs {k}", p.len());
                        }
                        if !s.target.is_on_manifold(p) {
                            bail!("init.point is not on the target");
                        }
                        p.clone()
                    }
                    None => {
                        let mut e0 = vec![0.0; k];
                        e0[0] = 1.0;
                        s.target.project_point(&e0)?
                    }
                };
                Ok(MapState::constant(s.mesh.num_vertices(), &p))
            }
            InitSpec::Perturbed { amplitude } => {
                let id = MapState::identity(&s.mesh, &s.target)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let field = OddField::random(&mut rng, k);
                let mut data = id.into_vec();
                for (x, y) in s.mesh.vertices().iter().zip(data.chunks_mut(k)) {
                    for (c, v) in y.iter_mut().enumerate() {
                        *v += amplitude * field.eval(c, x);
                    }
                }
                let mut u = MapState::new(k, data)?;
                u.project_onto(&s.target)?;
                Ok(u)
            }
            InitSpec::File { path } => Ok(hsphere::io::load_state(path, &s.mesh)?),
        }
    }

    /// Latitude family with seeded perturbations of its interior samples.
    pub fn sweepout(&self, s: &Setup) -> Result<SweepoutGrid> {
        let grid = SweepoutGrid::latitude(&s.mesh, &s.target, self.minmax.samples, self.minmax.r_max)?;
        let amp = self.minmax.perturbation;
        if amp == 0.0 {
            return Ok(grid);
        }
        let k = s.target.ambient_dim();
        let n = grid.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut states = grid.states().to_vec();
        for (i, u) in states.iter_mut().enumerate().take(n - 1).skip(1) {
            let field = OddField::random(&mut rng, k);
            let t = grid.params()[i];
            let w = amp * (std::f64::consts::PI * t).sin();
            let mut data = u.clone().into_vec();
            for (x, y) in s.mesh.vertices().iter().zip(data.chunks_mut(k)) {
                for (c, v) in y.iter_mut().enumerate() {
                    *v += w * field.eval(c, x);
                }
            }
            let mut p = MapState::new(k, data)?;
            p.project_onto(&s.target)?;
            *u = p;
        }
        Ok(SweepoutGrid::new(grid.params().to_vec(), states)?)
    }
}

/// Per-coordinate random combination of the odd monomials of degree 1 and 3.
struct OddField {
    linear: Vec<[f64; 3]>,
    cubic: Vec<[f64; 10]>,
}

impl OddField {
    fn random(rng: &mut ChaCha8Rng, k: usize) -> Self {
        let mut linear = Vec::with_capacity(k);
        let mut cubic = Vec::with_capacity(k);
        for _ in 0..k {
            linear.push(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
            cubic.push(std::array::from_fn(|_| rng.gen_range(-1.0..1.0)));
        }
        Self { linear, cubic }
    }

    fn eval(&self, c: usize, x: &[f64; 3]) -> f64 {
        let [a, b, z] = *x;
        let mono = [a * a * a, b * b * b, z * z * z, a * a * b, a * a * z, b * b * a, b * b * z, z * z * a, z * z * b, a * b * z];
        let l = &self.linear[c];
        let q = &self.cubic[c];
        l[0] * a + l[1] * b + l[2] * z + q.iter().zip(mono).map(|(q, m)| q * m).sum::<f64>()
    }
}

pub fn build_form(spec: &FormSpec, k: usize) -> Result<TwoFormField> {
    Ok(match spec {
        FormSpec::Zero => TwoFormField::zero(k),
        FormSpec::Volume { scale } => TwoFormField::volume(k, *scale)?,
        FormSpec::Cmc { h0 } => {
            if k != 3 {
                bail!("the cmc form needs a target in R^3, got R^{k}");
            }
            TwoFormField::cmc(*h0)?
        }
        FormSpec::Cosine { amplitude, frequency } => TwoFormField::cosine(k, *amplitude, *frequency)?,
        FormSpec::Expression { entries } => expression_form(entries, k)?,
    })
}

fn expression_form(entries: &[FormEntry], k: usize) -> Result<TwoFormField> {
    let mut nodes: Vec<(usize, usize, Node<DefaultNumericTypes>)> = Vec::with_capacity(entries.len());
    for e in entries {
        if !(e.i < e.j && e.j < k) {
            bail!("form entry ({}, {}) needs i < j < {k}", e.i, e.j);
        }
        if nodes.iter().any(|(i, j, _)| (*i, *j) == (e.i, e.j)) {
            bail!("form entry ({}, {}) given twice", e.i, e.j);
        }
        let node = build_operator_tree::<DefaultNumericTypes>(&e.expr)
            .map_err(|err| anyhow!("form entry ({}, {}): {err}", e.i, e.j))?;
        nodes.push((e.i, e.j, node));
    }
    let eval = move |y: &[f64], out: &mut [f64]| -> std::result::Result<(), String> {
        let mut ctx = HashMapContext::<DefaultNumericTypes>::new();
        for (c, v) in y.iter().enumerate() {
            ctx.set_value(format!("y{c}"), Value::Float(*v)).map_err(|e| e.to_string())?;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, j, node) in &nodes {
            let v = node.eval_number_with_context(&ctx).map_err(|e| e.to_string())?;
            out[i * k + j] = v;
            out[j * k + i] = -v;
        }
        Ok(())
    };
    let mut probe = vec![0.0; k * k];
    let y0: Vec<f64> = (0..k).map(|c| 0.1 * (c + 1) as f64).collect();
    eval(&y0, &mut probe).map_err(|e| anyhow!("form expression: {e}"))?;
    Ok(TwoFormField::custom("expression", k, move |y, out| {
        if eval(y, out).is_err() {
            out.iter_mut().for_each(|o| *o = f64::NAN);
        }
    }))
}
