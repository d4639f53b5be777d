//! Voxel discretization of the subsurface.
//!
//! Cells are cubes of edge `delta`. The station footprint is `nsx x nsy`; `padx`
//! and `pady` extra columns of cells are added on every side. Depth `z` is
//! positive downward and stations sit on the top face of the grid.
//!
//! Cell ordering is x fastest, then y, then z: cell `(i, j, k)` has linear index
//! `i + nx * (j + ny * k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nsx: usize,
    pub nsy: usize,
    pub nbz: usize,
    #[serde(default)]
    pub padx: usize,
    #[serde(default)]
    pub pady: usize,
    pub delta: f64,
    #[serde(default)]
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Station {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Axis-aligned box `[x0, x1] x [y0, y1] x [z0, z1]`, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
}

impl CellBox {
    pub fn new(x: [f64; 2], y: [f64; 2], z: [f64; 2]) -> Self {
        Self { x, y, z }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.x[0] + self.x[1]),
            0.5 * (self.y[0] + self.y[1]),
            0.5 * (self.z[0] + self.z[1]),
        ]
    }

    pub fn volume(&self) -> f64 {
        (self.x[1] - self.x[0]) * (self.y[1] - self.y[0]) * (self.z[1] - self.z[0])
    }

    pub fn min_edge(&self) -> f64 {
        (self.x[1] - self.x[0])
            .min(self.y[1] - self.y[0])
            .min(self.z[1] - self.z[0])
    }

    pub fn diagonal(&self) -> f64 {
        let dx = self.x[1] - self.x[0];
        let dy = self.y[1] - self.y[0];
        let dz = self.z[1] - self.z[0];
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn translated(&self, by: [f64; 3]) -> Self {
        Self {
            x: [self.x[0] + by[0], self.x[1] + by[0]],
            y: [self.y[0] + by[1], self.y[1] + by[1]],
            z: [self.z[0] + by[2], self.z[1] + by[2]],
        }
    }
}

impl Mesh {
    pub fn new(nsx: usize, nsy: usize, nbz: usize, delta: f64) -> Result<Self> {
        let mesh = Self {
            nsx,
            nsy,
            nbz,
            padx: 0,
            pady: 0,
            delta,
            origin: [0.0; 3],
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn with_padding(mut self, padx: usize, pady: usize) -> Self {
        self.padx = padx;
        self.pady = pady;
        self
    }

    pub fn with_origin(mut self, origin: [f64; 3]) -> Self {
        self.origin = origin;
        self
    }

    /// The 20 x 20 x 10 grid with 50 m cells used for the dipping-dike experiment.
    pub fn dike() -> Self {
        Self::new(20, 20, 10, 50.0).expect("valid preset")
    }

    /// The 15 x 10 x 8 grid with 50 m cells used for the cube experiment.
    pub fn cube() -> Self {
        Self::new(15, 10, 8, 50.0).expect("valid preset")
    }

    pub fn validate(&self) -> Result<()> {
        if self.nsx == 0 || self.nsy == 0 || self.nbz == 0 {
            return Err(Error::InvalidMesh(format!(
                "nsx, nsy, nbz must be >= 1 (got {}, {}, {})",
                self.nsx, self.nsy, self.nbz
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidMesh(format!(
                "delta must be finite and > 0 (got {})",
                self.delta
            )));
        }
        if self.origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.nsx + 2 * self.padx
    }

    pub fn ny(&self) -> usize {
        self.nsy + 2 * self.pady
    }

    pub fn n_cells(&self) -> usize {
        self.nx() * self.ny() * self.nbz
    }

    pub fn n_stations(&self) -> usize {
        self.nsx * self.nsy
    }

    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx() * (j + self.ny() * k)
    }

    pub fn cell_ijk(&self, index: usize) -> (usize, usize, usize) {
        let nx = self.nx();
        let ny = self.ny();
        (index % nx, (index / nx) % ny, index / (nx * ny))
    }

    pub fn cell_box(&self, index: usize) -> CellBox {
        let (i, j, k) = self.cell_ijk(index);
        let [x0, y0, z0] = self.origin;
        let d = self.delta;
        CellBox {
            x: [x0 + i as f64 * d, x0 + (i + 1) as f64 * d],
            y: [y0 + j as f64 * d, y0 + (j + 1) as f64 * d],
            z: [z0 + k as f64 * d, z0 + (k + 1) as f64 * d],
        }
    }

    pub fn cell_center(&self, index: usize) -> [f64; 3] {
        self.cell_box(index).center()
    }

    pub fn cells(&self) -> impl Iterator<Item = CellBox> + '_ {
        (0..self.n_cells()).map(|c| self.cell_box(c))
    }

    /// Stations at the top-face centers of the non-padding top-layer cells,
    /// ordered x fastest.
    pub fn stations(&self) -> Vec<Station> {
        let [x0, y0, z0] = self.origin;
        let d = self.delta;
        let mut out = Vec::with_capacity(self.n_stations());
        for j in 0..self.nsy {
            for i in 0..self.nsx {
                out.push(Station {
                    x: x0 + (self.padx + i) as f64 * d + 0.5 * d,
                    y: y0 + (self.pady + j) as f64 * d + 0.5 * d,
                    z: z0,
                });
            }
        }
        out
    }

    /// Whole mesh volume.
    pub fn bounds(&self) -> CellBox {
        let [x0, y0, z0] = self.origin;
        let d = self.delta;
        CellBox {
            x: [x0, x0 + self.nx() as f64 * d],
            y: [y0, y0 + self.ny() as f64 * d],
            z: [z0, z0 + self.nbz as f64 * d],
        }
    }
}

/// Density contrasts (g/cm^3), one per mesh cell in the mesh ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    pub values: Vec<f64>,
}

impl DensityModel {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn for_mesh(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "density model",
                expected: mesh.n_cells(),
                found: values.len(),
            });
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("density at cell {j} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}
