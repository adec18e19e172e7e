//! Text formats for meshes, solutions and study directories. All writes
//! go through a temporary file in the target directory and a rename.
//!
//! Mesh files:
//!
//! ```text
//! negproj-mesh 1
//! dim 2
//! boundary circle <cx> <cy> <r>      (or: boundary flat)
//! vertices <n>
//! <x> <y> <on-boundary 0|1>          (n lines)
//! elements <m>
//! <v0> <v1> [<v2>] <refinement level> (m lines)
//! ```
//!
//! Study directories hold `config.json`, `manifest.json`, `meshes/`,
//! `solutions/` and CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::femspace::{FemFunction, TestKind, TestSpace, TrialKind};
use crate::mesh::{BoundaryKind, SimplicialMesh};
use crate::mixed::{MixedSolution, StageLog};

pub const MESH_FORMAT_VERSION: u32 = 1;
pub const SOLUTION_FORMAT_VERSION: u32 = 1;
const MESH_MAGIC: &str = "negproj-mesh";

/// Writes `contents` to `path` atomically.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn mesh_to_string(mesh: &SimplicialMesh) -> String {
    let mut s = String::new();
    writeln!(s, "{MESH_MAGIC} {MESH_FORMAT_VERSION}").unwrap();
    writeln!(s, "dim {}", mesh.dim()).unwrap();
    match mesh.boundary_kind() {
        BoundaryKind::Flat => writeln!(s, "boundary flat").unwrap(),
        BoundaryKind::Circle { center, radius } => {
            writeln!(s, "boundary circle {:.16e} {:.16e} {:.16e}", center[0], center[1], radius).unwrap()
        }
    }
    writeln!(s, "vertices {}", mesh.n_vertices()).unwrap();
    for (i, p) in mesh.vertices().iter().enumerate() {
        writeln!(s, "{:.16e} {:.16e} {}", p[0], p[1], u8::from(mesh.is_boundary_vertex(i))).unwrap();
    }
    writeln!(s, "elements {}", mesh.n_elements()).unwrap();
    for (e, v) in mesh.elements().enumerate() {
        for i in v {
            write!(s, "{i} ").unwrap();
        }
        writeln!(s, "{}", mesh.refinement_levels()[e]).unwrap();
    }
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next non-empty line split into tokens, with its 1-based number.
    fn next(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Ok((i + 1, tokens));
            }
        }
        Err(Error::Parse { line: self.last + 1, message: format!("unexpected end of file, expected {what}") })
    }

    fn header(&mut self, key: &str) -> Result<(usize, Vec<&'a str>)> {
        let (line, t) = self.next(key)?;
        if t[0] != key {
            return Err(Error::Parse { line, message: format!("expected '{key}', found '{}'", t[0]) });
        }
        Ok((line, t[1..].to_vec()))
    }
}

fn parse<T: std::str::FromStr>(line: usize, token: Option<&&str>, what: &str) -> Result<T> {
    let token = token.ok_or_else(|| Error::Parse { line, message: format!("missing {what}") })?;
    token.parse().map_err(|_| Error::Parse { line, message: format!("invalid {what} '{token}'") })
}

pub fn mesh_from_str(text: &str) -> Result<SimplicialMesh> {
    let mut lines = Lines::new(text);
    let (line, magic) = lines.next("mesh header")?;
    if magic[0] != MESH_MAGIC {
        return Err(Error::Parse { line, message: format!("not a mesh file (found '{}')", magic[0]) });
    }
    let version: u32 = parse(line, magic.get(1), "format version")?;
    if version != MESH_FORMAT_VERSION {
        return Err(Error::IncompatibleVersion { found: version, expected: MESH_FORMAT_VERSION });
    }
    let (line, t) = lines.header("dim")?;
    let dim: usize = parse(line, t.first(), "dimension")?;
    if dim != 1 && dim != 2 {
        return Err(Error::Parse { line, message: format!("unsupported dimension {dim}") });
    }
    let (line, t) = lines.header("boundary")?;
    let kind = match t.first().copied() {
        Some("flat") => BoundaryKind::Flat,
        Some("circle") => BoundaryKind::Circle {
            center: [parse(line, t.get(1), "center x")?, parse(line, t.get(2), "center y")?],
            radius: parse(line, t.get(3), "radius")?,
        },
        _ => return Err(Error::Parse { line, message: "boundary must be 'flat' or 'circle cx cy r'".into() }),
    };
    let (line, t) = lines.header("vertices")?;
    let nv: usize = parse(line, t.first(), "vertex count")?;
    let mut vertices = Vec::with_capacity(nv);
    let mut boundary = Vec::new();
    for i in 0..nv {
        let (line, t) = lines.next("vertex")?;
        vertices.push([parse(line, t.first(), "x")?, parse(line, t.get(1), "y")?]);
        match t.get(2).copied() {
            Some("1") => boundary.push(i),
            Some("0") => {}
            _ => return Err(Error::Parse { line, message: "boundary flag must be 0 or 1".into() }),
        }
    }
    let (line, t) = lines.header("elements")?;
    let ne: usize = parse(line, t.first(), "element count")?;
    let mut elements = Vec::with_capacity(ne * (dim + 1));
    let mut levels = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (line, t) = lines.next("element")?;
        if t.len() != dim + 2 {
            return Err(Error::Parse { line, message: format!("expected {} integers", dim + 2) });
        }
        for k in 0..=dim {
            let v: usize = parse(line, t.get(k), "vertex index")?;
            if v >= nv {
                return Err(Error::Parse { line, message: format!("vertex index {v} out of range") });
            }
            elements.push(v);
        }
        levels.push(parse(line, t.get(dim + 1), "refinement level")?);
    }
    SimplicialMesh::from_parts(dim, vertices, elements, &boundary, kind)?.with_levels(levels)
}

pub fn save_mesh(mesh: &SimplicialMesh, path: &Path) -> Result<()> {
    write_atomic(path, mesh_to_string(mesh).as_bytes())
}

pub fn load_mesh(path: &Path) -> Result<SimplicialMesh> {
    mesh_from_str(&fs::read_to_string(path)?)
}

/// Coefficients and metadata of a projection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub version: u32,
    pub q: f64,
    pub p: f64,
    pub trial_kind: TrialKind,
    pub test_kind: TestKind,
    pub r_coeffs: Vec<f64>,
    pub f_coeffs: Vec<f64>,
    pub estimator_global: f64,
    pub estimator_local: Vec<f64>,
    pub newton_iters: usize,
    pub continuation_path: Vec<f64>,
    pub final_residual: f64,
    pub orthogonality_defect: f64,
    pub stages: Vec<StageLog>,
    /// Mesh file, relative to the solution file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_file: Option<String>,
}

impl SolutionRecord {
    pub fn new(solution: &MixedSolution, trial_kind: TrialKind) -> Self {
        Self {
            version: SOLUTION_FORMAT_VERSION,
            q: solution.q,
            p: solution.p,
            trial_kind,
            test_kind: solution.r.space.kind(),
            r_coeffs: solution.r.coeffs.clone(),
            f_coeffs: solution.f_coeffs.clone(),
            estimator_global: solution.estimator_global,
            estimator_local: solution.estimator_local.clone(),
            newton_iters: solution.newton_iters,
            continuation_path: solution.continuation_path.clone(),
            final_residual: solution.final_residual,
            orthogonality_defect: solution.orthogonality_defect,
            stages: solution.stages.clone(),
            mesh_file: None,
        }
    }

    /// Rebuilds the solution on `mesh`.
    pub fn into_solution(self, mesh: Arc<SimplicialMesh>) -> Result<MixedSolution> {
        let space = Arc::new(TestSpace::new(mesh, self.test_kind));
        Ok(MixedSolution {
            q: self.q,
            p: self.p,
            r: FemFunction::new(space, self.r_coeffs)?,
            f_coeffs: self.f_coeffs,
            estimator_global: self.estimator_global,
            estimator_local: self.estimator_local,
            newton_iters: self.newton_iters,
            continuation_path: self.continuation_path,
            final_residual: self.final_residual,
            orthogonality_defect: self.orthogonality_defect,
            stages: self.stages,
        })
    }
}

pub fn solution_to_string(record: &SolutionRecord) -> Result<String> {
    Ok(serde_json::to_string_pretty(record)?)
}

pub fn solution_from_str(text: &str) -> Result<SolutionRecord> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Parse { line: 1, message: "missing version field".into() })?;
    if found != u64::from(SOLUTION_FORMAT_VERSION) {
        return Err(Error::IncompatibleVersion { found: found as u32, expected: SOLUTION_FORMAT_VERSION });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn save_solution(record: &SolutionRecord, path: &Path) -> Result<()> {
    write_atomic(path, solution_to_string(record)?.as_bytes())
}

pub fn load_solution(path: &Path) -> Result<SolutionRecord> {
    solution_from_str(&fs::read_to_string(path)?)
}

/// Files referenced by a study directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<String>,
}

/// A study directory: config copy, per-level meshes and solutions, tables.
#[derive(Clone, Debug)]
pub struct StudyArchive {
    root: PathBuf,
    manifest: Manifest,
}

impl StudyArchive {
    const MANIFEST: &'static str = "manifest.json";

    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("meshes"))?;
        fs::create_dir_all(root.join("solutions"))?;
        let archive = Self { root, manifest: Manifest::default() };
        archive.write_manifest()?;
        Ok(archive)
    }

    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest = serde_json::from_str(&fs::read_to_string(root.join(Self::MANIFEST))?)?;
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.manifest.files
    }

    fn write_manifest(&self) -> Result<()> {
        write_atomic(&self.root.join(Self::MANIFEST), serde_json::to_string_pretty(&self.manifest)?.as_bytes())
    }

    fn record(&mut self, rel: String) -> Result<PathBuf> {
        if !self.manifest.files.contains(&rel) {
            self.manifest.files.push(rel.clone());
            self.write_manifest()?;
        }
        Ok(self.root.join(rel))
    }

    pub fn write_config(&mut self, config: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(config)?;
        write_atomic(&self.root.join("config.json"), text.as_bytes())?;
        self.record("config.json".into()).map(|_| ())
    }

    /// Stores the mesh and solution of one level under `tag` (e.g. `p1.5_level03`).
    pub fn save_level(&mut self, tag: &str, mesh: &SimplicialMesh, record: &SolutionRecord) -> Result<()> {
        let mesh_rel = format!("meshes/{tag}.mesh");
        save_mesh(mesh, &self.root.join(&mesh_rel))?;
        let mut record = record.clone();
        record.mesh_file = Some(format!("../{mesh_rel}"));
        let sol_rel = format!("solutions/{tag}.json");
        save_solution(&record, &self.root.join(&sol_rel))?;
        self.record(mesh_rel)?;
        self.record(sol_rel)?;
        Ok(())
    }

    pub fn save_mesh(&mut self, tag: &str, mesh: &SimplicialMesh) -> Result<()> {
        let rel = format!("meshes/{tag}.mesh");
        save_mesh(mesh, &self.root.join(&rel))?;
        self.record(rel).map(|_| ())
    }

    /// Writes a file at `name` relative to the root.
    pub fn write_text(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        write_atomic(&path, contents.as_bytes())?;
        self.record(name.into())
    }

    /// Loads a stored level: mesh and solution.
    pub fn load_level(&self, tag: &str) -> Result<(Arc<SimplicialMesh>, MixedSolution)> {
        let record = load_solution(&self.root.join(format!("solutions/{tag}.json")))?;
        let mesh = Arc::new(load_mesh(&self.root.join(format!("meshes/{tag}.mesh")))?);
        Ok((mesh.clone(), record.into_solution(mesh)?))
    }

    /// Referenced files that do not exist.
    pub fn missing_files(&self) -> Vec<String> {
        self.manifest.files.iter().filter(|f| !self.root.join(f).is_file()).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::duality::DualityParams;
    use crate::femspace::{make_pair, Pairing};
    use crate::functional::RoughFunctional;
    use crate::mixed::{solve_projection, SolverOptions};

    #[test]
    fn interval_round_trip() {
        let mesh = SimplicialMesh::interval(4, 0.0, 1.0).unwrap();
        let back = mesh_from_str(&mesh_to_string(&mesh)).unwrap();
        assert_eq!(back, mesh);
    }

    #[test]
    fn disk_round_trip_then_refine() {
        let mesh = SimplicialMesh::disk(2).refine(&[3, 7, 11]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disk.mesh");
        save_mesh(&mesh, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back, mesh);
        assert_eq!(back.refine(&[0, 5]), mesh.refine(&[0, 5]));
    }

    #[test]
    fn truncated_file_names_the_line() {
        let text = mesh_to_string(&SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let cut: String = text.lines().take(7).map(|l| format!("{l}\n")).collect();
        match mesh_from_str(&cut) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 8);
                assert!(message.contains("end of file"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = text.replace("elements 4", "elements x");
        assert!(matches!(mesh_from_str(&bad), Err(Error::Parse { line: 10, .. })));
    }

    #[test]
    fn solution_round_trip_and_recomputed_estimator() {
        let mesh = Arc::new(SimplicialMesh::disk(1));
        let (g, v) = make_pair(mesh.clone(), Pairing::P0P1Bubble).unwrap();
        let sol = solve_projection(
            &RoughFunctional::delta([0.1, 0.2]),
            &g,
            Arc::new(v),
            DualityParams::from_p(1.5).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        let rec = SolutionRecord::new(&sol, g.kind());
        let back = solution_from_str(&solution_to_string(&rec).unwrap()).unwrap();
        assert_eq!(back, rec);
        for (a, b) in back.r_coeffs.iter().zip(&sol.r.coeffs) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let rebuilt = back.into_solution(mesh).unwrap();
        let q = rebuilt.q;
        let recomputed = crate::femspace::wq_seminorm(&rebuilt.r, q).unwrap().powf(q - 1.0);
        assert!((recomputed - rebuilt.estimator_global).abs() < 1e-12 * rebuilt.estimator_global);
    }

    #[test]
    fn version_mismatch() {
        let text = r#"{"version": 7}"#;
        assert!(matches!(solution_from_str(text), Err(Error::IncompatibleVersion { found: 7, expected: 1 })));
        let mesh = mesh_to_string(&SimplicialMesh::interval(2, 0.0, 1.0).unwrap()).replace("negproj-mesh 1", "negproj-mesh 2");
        assert!(matches!(mesh_from_str(&mesh), Err(Error::IncompatibleVersion { found: 2, .. })));
    }

    #[test]
    fn archive_tracks_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = StudyArchive::create(dir.path().join("study")).unwrap();
        a.write_config(&serde_json::json!({"experiment": "delta1d"})).unwrap();
        let mesh = Arc::new(SimplicialMesh::interval(4, 0.0, 1.0).unwrap());
        let (g, v) = make_pair(mesh.clone(), Pairing::P0PdPlus1).unwrap();
        let sol = solve_projection(
            &RoughFunctional::delta([0.5, 0.0]),
            &g,
            Arc::new(v),
            DualityParams::from_q(2.0).unwrap(),
            &SolverOptions::default(),
        )
        .unwrap();
        a.save_level("level00", &mesh, &SolutionRecord::new(&sol, g.kind())).unwrap();
        a.write_text("convergence.csv", "level\n0\n").unwrap();
        let reopened = StudyArchive::open(a.root()).unwrap();
        assert_eq!(reopened.files().len(), 4);
        assert!(reopened.missing_files().is_empty());
        let (m, s) = reopened.load_level("level00").unwrap();
        assert_eq!(*m, *mesh);
        assert_eq!(s.f_coeffs, sol.f_coeffs);
    }
}
