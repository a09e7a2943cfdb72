//! Uniform axis-aligned quad/hex grids with macroelement grouping.
//!
//! Ordering is lexicographic with x fastest everywhere:
//! cell `(i, j, k)` has index `i + nx * (j + ny * k)`, nodes likewise with
//! `nx + 1, ny + 1`. Faces are grouped by normal axis (all x-normal faces,
//! then y, then z); within an axis group they are ordered lexicographically by
//! `(position along axis, j, k)` with the axis position varying fastest.
//! Macroelements are the 2×2(×2) blocks `(i / 2, j / 2, k / 2)`, ordered the
//! same way.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Side of the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Side {
    pub const ALL: [Side; 6] = [Side::XMin, Side::XMax, Side::YMin, Side::YMax, Side::ZMin, Side::ZMax];

    pub fn new(axis: usize, upper: bool) -> Side {
        match (axis, upper) {
            (0, false) => Side::XMin,
            (0, true) => Side::XMax,
            (1, false) => Side::YMin,
            (1, true) => Side::YMax,
            (2, false) => Side::ZMin,
            _ => Side::ZMax,
        }
    }

    pub fn axis(self) -> usize {
        match self {
            Side::XMin | Side::XMax => 0,
            Side::YMin | Side::YMax => 1,
            Side::ZMin | Side::ZMax => 2,
        }
    }

    pub fn is_upper(self) -> bool {
        matches!(self, Side::XMax | Side::YMax | Side::ZMax)
    }

    /// The sides present in a mesh of the given dimension.
    pub fn sides(dim: usize) -> &'static [Side] {
        &Self::ALL[..2 * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Face {
    /// Cell on the lower side of the face (the only cell for boundary faces).
    pub k: usize,
    /// Cell on the upper side; `None` on the domain boundary.
    pub l: Option<usize>,
    pub axis: usize,
    /// Unit normal, pointing from `k` to `l` (outward on the boundary).
    pub normal: [f64; 3],
    pub area: f64,
    /// Centroid-to-centroid distance; boundary faces use twice the
    /// centroid-to-face distance so that `distance / 2` is the half-cell length.
    pub distance: f64,
    /// Both adjacent cells belong to the same macroelement.
    pub macro_interior: bool,
    pub boundary: Option<Side>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.l.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    dim: usize,
    counts: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    nodes: Vec<[f64; 3]>,
    cell_nodes: Vec<usize>,
    faces: Vec<Face>,
    cell_macro: Vec<usize>,
    macro_cells: Vec<usize>,
    macro_faces: Vec<usize>,
}

/// Builds a uniform grid over `[0, extent[0]] × [0, extent[1]] (× [0, extent[2]])`.
///
/// The dimension is taken from the slice lengths. Cell counts must be even so
/// that 2×2(×2) macroelements tile the grid.
pub fn build_structured_mesh(extent: &[f64], cell_counts: &[usize]) -> Result<StructuredMesh> {
    let dim = extent.len();
    if !(dim == 2 || dim == 3) || cell_counts.len() != dim {
        return Err(Error::InvalidInput(format!(
            "mesh needs 2 or 3 extents with matching cell counts, got {} and {}",
            extent.len(),
            cell_counts.len()
        )));
    }
    for (axis, &e) in extent.iter().enumerate() {
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::InvalidInput(format!(
                "extent along axis {axis} must be positive, got {e}"
            )));
        }
    }
    for (axis, &n) in cell_counts.iter().enumerate() {
        if n == 0 || n % 2 != 0 {
            return Err(Error::OddCellCount { axis, count: n });
        }
    }

    let mut counts = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    for a in 0..dim {
        counts[a] = cell_counts[a];
        spacing[a] = extent[a] / cell_counts[a] as f64;
    }
    let origin = [0.0; 3];
    let node_counts = node_counts(dim, counts);

    let mut nodes = Vec::with_capacity(node_counts.iter().product());
    for k in 0..node_counts[2] {
        for j in 0..node_counts[1] {
            for i in 0..node_counts[0] {
                let z = if dim == 3 {
                    origin[2] + k as f64 * spacing[2]
                } else {
                    0.0
                };
                nodes.push([origin[0] + i as f64 * spacing[0], origin[1] + j as f64 * spacing[1], z]);
            }
        }
    }

    let ncells = counts[0] * counts[1] * counts[2];
    let npc = 1usize << dim;
    let mut cell_nodes = Vec::with_capacity(ncells * npc);
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                for local in 0..npc {
                    let di = local & 1;
                    let dj = (local >> 1) & 1;
                    let dk = (local >> 2) & 1;
                    cell_nodes.push((i + di) + node_counts[0] * ((j + dj) + node_counts[1] * (k + dk)));
                }
            }
        }
    }

    let macro_counts = [counts[0] / 2, counts[1] / 2, if dim == 3 { counts[2] / 2 } else { 1 }];
    let nmacro = macro_counts.iter().product::<usize>();
    let mut cell_macro = Vec::with_capacity(ncells);
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let mk = if dim == 3 { k / 2 } else { 0 };
                cell_macro.push(i / 2 + macro_counts[0] * (j / 2 + macro_counts[1] * mk));
            }
        }
    }
    let mut macro_cells = alloc::vec![usize::MAX; nmacro * npc];
    let mut fill = alloc::vec![0usize; nmacro];
    for (c, &m) in cell_macro.iter().enumerate() {
        macro_cells[m * npc + fill[m]] = c;
        fill[m] += 1;
    }

    let mut faces = Vec::new();
    let cell_at = |i: usize, j: usize, k: usize| i + counts[0] * (j + counts[1] * k);
    for axis in 0..dim {
        let mut span = counts;
        span[axis] += 1;
        let mut area = 1.0;
        for a in 0..3 {
            if a != axis {
                area *= spacing[a];
            }
        }
        for k in 0..span[2] {
            for j in 0..span[1] {
                for i in 0..span[0] {
                    let pos = [i, j, k][axis];
                    let mut lower = [i, j, k];
                    let mut normal = [0.0; 3];
                    let face = if pos == 0 {
                        normal[axis] = -1.0;
                        Face {
                            k: cell_at(i, j, k),
                            l: None,
                            axis,
                            normal,
                            area,
                            distance: spacing[axis],
                            macro_interior: false,
                            boundary: Some(Side::new(axis, false)),
                        }
                    } else {
                        lower[axis] -= 1;
                        normal[axis] = 1.0;
                        let kc = cell_at(lower[0], lower[1], lower[2]);
                        if pos == counts[axis] {
                            Face {
                                k: kc,
                                l: None,
                                axis,
                                normal,
                                area,
                                distance: spacing[axis],
                                macro_interior: false,
                                boundary: Some(Side::new(axis, true)),
                            }
                        } else {
                            let lc = cell_at(i, j, k);
                            Face {
                                k: kc,
                                l: Some(lc),
                                axis,
                                normal,
                                area,
                                distance: spacing[axis],
                                macro_interior: cell_macro[kc] == cell_macro[lc],
                                boundary: None,
                            }
                        }
                    };
                    faces.push(face);
                }
            }
        }
    }

    let per_macro = if dim == 3 { 12 } else { 4 };
    let mut macro_faces = alloc::vec![usize::MAX; nmacro * per_macro];
    let mut fill = alloc::vec![0usize; nmacro];
    for (f, face) in faces.iter().enumerate() {
        if face.macro_interior {
            let m = cell_macro[face.k];
            macro_faces[m * per_macro + fill[m]] = f;
            fill[m] += 1;
        }
    }
    debug_assert!(fill.iter().all(|&n| n == per_macro));

    Ok(StructuredMesh {
        dim,
        counts,
        spacing,
        origin,
        nodes,
        cell_nodes,
        faces,
        cell_macro,
        macro_cells,
        macro_faces,
    })
}

fn node_counts(dim: usize, counts: [usize; 3]) -> [usize; 3] {
    [counts[0] + 1, counts[1] + 1, if dim == 3 { counts[2] + 1 } else { 1 }]
}

impl StructuredMesh {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; the third entry is 1 in 2D.
    pub fn cell_counts(&self) -> [usize; 3] {
        self.counts
    }

    /// Cell edge lengths; the third entry is the unit thickness in 2D.
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn extent(&self) -> [f64; 3] {
        let mut e = [0.0; 3];
        for a in 0..3 {
            e[a] = if a < self.dim {
                self.spacing[a] * self.counts[a] as f64
            } else {
                1.0
            };
        }
        e
    }

    pub fn num_cells(&self) -> usize {
        self.cell_macro.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_counts(&self) -> [usize; 3] {
        node_counts(self.dim, self.counts)
    }

    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn cells_per_macro(&self) -> usize {
        1 << self.dim
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    pub fn cell_ijk(&self, c: usize) -> [usize; 3] {
        let i = c % self.counts[0];
        let j = (c / self.counts[0]) % self.counts[1];
        let k = c / (self.counts[0] * self.counts[1]);
        [i, j, k]
    }

    pub fn node_ijk(&self, n: usize) -> [usize; 3] {
        let nc = self.node_counts();
        [n % nc[0], (n / nc[0]) % nc[1], n / (nc[0] * nc[1])]
    }

    pub fn node_coords(&self, n: usize) -> [f64; 3] {
        self.nodes[n]
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    /// Nodes of cell `c` in local lexicographic order (x fastest).
    pub fn cell_nodes(&self, c: usize) -> &[usize] {
        let npc = self.nodes_per_cell();
        &self.cell_nodes[c * npc..(c + 1) * npc]
    }

    pub fn cell_centroid(&self, c: usize) -> [f64; 3] {
        let ijk = self.cell_ijk(c);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = self.origin[a] + (ijk[a] as f64 + 0.5) * self.spacing[a];
        }
        x
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn num_macroelements(&self) -> usize {
        self.cell_macro.len() / self.cells_per_macro()
    }

    pub fn macro_of(&self, c: usize) -> usize {
        self.cell_macro[c]
    }

    /// Cells of macroelement `m`, in ascending (lexicographic) order.
    pub fn macro_cells(&self, m: usize) -> &[usize] {
        let n = self.cells_per_macro();
        &self.macro_cells[m * n..(m + 1) * n]
    }

    /// Face indices interior to macroelement `m` (4 in 2D, 12 in 3D).
    pub fn macro_interior_faces(&self, m: usize) -> &[usize] {
        let n = if self.dim == 3 { 12 } else { 4 };
        &self.macro_faces[m * n..(m + 1) * n]
    }

    /// Index of the cell containing `x`.
    ///
    /// A point on a grid plane belongs to the cell below it (lower index); on
    /// the outer boundary it belongs to the adjacent cell.
    pub fn locate_point(&self, x: &[f64]) -> Result<usize> {
        let mut ijk = [0usize; 3];
        let ext = self.extent();
        for a in 0..self.dim {
            let xa = x.get(a).copied().unwrap_or(0.0) - self.origin[a];
            if !(xa >= 0.0 && xa <= ext[a]) {
                return Err(Error::PointOutsideDomain {
                    x: x[0],
                    y: x.get(1).copied().unwrap_or(0.0),
                    z: x.get(2).copied().unwrap_or(0.0),
                });
            }
            let t = xa / self.spacing[a];
            let mut idx = libm::floor(t) as usize;
            if (idx as f64) == t && idx > 0 {
                idx -= 1;
            }
            ijk[a] = idx.min(self.counts[a] - 1);
        }
        Ok(self.cell_index(ijk[0], ijk[1], ijk[2]))
    }
}

/// Two-point transmissibility of a face from per-cell isotropic permeabilities.
///
/// Interior faces combine the half-transmissibilities `A κ / (d / 2)` of both
/// cells harmonically; boundary faces use the single half-transmissibility of
/// the inner cell. Zero permeability on either side gives zero.
pub fn face_transmissibility(face: &Face, perm: &[f64]) -> f64 {
    let half = |c: usize| face.area * perm[c] / (0.5 * face.distance);
    let tk = half(face.k);
    match face.l {
        None => tk,
        Some(l) => {
            let tl = half(l);
            if tk <= 0.0 || tl <= 0.0 {
                0.0
            } else {
                tk * tl / (tk + tl)
            }
        }
    }
}

/// Transmissibility of every face of `mesh`, in face order.
pub fn transmissibilities(mesh: &StructuredMesh, perm: &[f64]) -> Vec<f64> {
    mesh.faces().iter().map(|f| face_transmissibility(f, perm)).collect()
}
