use super::{Point, SimplicialMesh};

/// Bucket grid over element bounding boxes for point location.
pub struct PointLocator<'a> {
    mesh: &'a SimplicialMesh,
    lo: Point,
    cell: [f64; 2],
    n: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

const TOL: f64 = 1e-12;

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a SimplicialMesh) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in mesh.vertices() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let ne = mesh.n_elements().max(1);
        let n = match mesh.dim() {
            1 => [ne, 1],
            _ => {
                let s = (ne as f64).sqrt().ceil() as usize;
                [s, s]
            }
        };
        let cell = [
            ((hi[0] - lo[0]) / n[0] as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / n[1] as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = Self { mesh, lo, cell, n, buckets: vec![Vec::new(); n[0] * n[1]] };
        for (e, v) in mesh.elements().enumerate() {
            let mut blo = [f64::INFINITY; 2];
            let mut bhi = [f64::NEG_INFINITY; 2];
            for &i in v {
                let p = mesh.vertex(i);
                for k in 0..2 {
                    blo[k] = blo[k].min(p[k]);
                    bhi[k] = bhi[k].max(p[k]);
                }
            }
            let (i0, j0) = loc.cell_of(blo, -1);
            let (i1, j1) = loc.cell_of(bhi, 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.buckets[j * n[0] + i].push(e);
                }
            }
        }
        loc
    }

    fn cell_of(&self, p: Point, nudge: i32) -> (usize, usize) {
        let idx = |k: usize| {
            let t = (p[k] - self.lo[k]) / self.cell[k] + nudge as f64 * 1e-9;
            (t.floor().max(0.0) as usize).min(self.n[k] - 1)
        };
        (idx(0), idx(1))
    }

    /// Element containing `x` with its reference coordinates. Points on
    /// shared faces go to the lowest-indexed owner. `None` outside the mesh.
    pub fn locate(&self, x: Point) -> Option<(usize, [f64; 2])> {
        let (i, j) = self.cell_of(x, 0);
        let mut best: Option<(usize, [f64; 2])> = None;
        for &e in &self.buckets[j * self.n[0] + i] {
            if best.is_some_and(|(b, _)| b <= e) {
                continue;
            }
            if let Some(xr) = self.reference_coords(e, x) {
                best = Some((e, xr));
            }
        }
        best
    }

    /// Like `locate`, but a point outside the mesh goes to the element whose
    /// smallest barycentric coordinate is largest, with unclamped reference
    /// coordinates. Used for data on nested meshes whose curved boundary
    /// moved under refinement.
    pub fn locate_nearest(&self, x: Point) -> Option<(usize, [f64; 2])> {
        if let Some(hit) = self.locate(x) {
            return Some(hit);
        }
        let dim = self.mesh.dim();
        let mut best: Option<(f64, usize, [f64; 2])> = None;
        for e in 0..self.mesh.n_elements() {
            let Ok(map) = self.mesh.element_map(e) else { continue };
            let xr = map.apply_inverse(x);
            let lam = super::barycentric(dim, xr);
            let worst = lam[..=dim].iter().copied().fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(b, _, _)| worst > b) {
                best = Some((worst, e, xr));
            }
        }
        best.map(|(_, e, xr)| (e, xr))
    }

    fn reference_coords(&self, e: usize, x: Point) -> Option<[f64; 2]> {
        let map = self.mesh.element_map(e).ok()?;
        let xr = map.apply_inverse(x);
        let lam = super::barycentric(self.mesh.dim(), xr);
        let inside = lam[..=self.mesh.dim()].iter().all(|&l| l >= -TOL);
        inside.then(|| {
            let clamp = |t: f64| t.clamp(0.0, 1.0);
            [clamp(xr[0]), clamp(xr[1])]
        })
    }
}
