use super::camera::Projection;
use crate::error::{Error, Result};
use crate::ndiff::{Tape, Var};

/// A coarse `rows × cols` grid laid over an image of `image_h × image_w`
/// pixels. Pixels map to cells by linear scaling with floor binning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub image_h: usize,
    pub image_w: usize,
}

impl FeatureGrid {
    pub fn new(rows: usize, cols: usize, image_h: usize, image_w: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || image_h == 0 || image_w == 0 {
            return Err(Error::contract("feature grid extents must be positive"));
        }
        Ok(Self {
            rows,
            cols,
            image_h,
            image_w,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Row-major cell index of pixel `(u, v)`; `None` outside the image.
    pub fn cell_of(&self, u: f64, v: f64) -> Option<usize> {
        if !(u >= 0.0 && v >= 0.0 && u < self.image_w as f64 && v < self.image_h as f64) {
            return None;
        }
        let r = ((v * self.rows as f64 / self.image_h as f64).floor() as usize).min(self.rows - 1);
        let c = ((u * self.cols as f64 / self.image_w as f64).floor() as usize).min(self.cols - 1);
        Some(r * self.cols + c)
    }
}

/// Which cell each point lands in, plus the per-cell occupancy and nearest
/// depth. Built once per scene and reused across epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterPlan {
    pub grid: FeatureGrid,
    pub point_cell: Vec<Option<usize>>,
    pub occupancy: Vec<bool>,
    /// Smallest camera depth among the points in each cell (`+∞` if empty).
    pub zbuffer: Vec<f64>,
}

impl RasterPlan {
    pub fn new(proj: &Projection, grid: FeatureGrid) -> Result<Self> {
        if proj.width != grid.image_w || proj.height != grid.image_h {
            return Err(Error::dim(
                "rasterize",
                &[proj.height, proj.width],
                &[grid.image_h, grid.image_w],
            ));
        }
        let mut occupancy = vec![false; grid.num_cells()];
        let mut zbuffer = vec![f64::INFINITY; grid.num_cells()];
        let point_cell = (0..proj.len())
            .map(|i| {
                if !proj.valid[i] {
                    return None;
                }
                let cell = grid.cell_of(proj.u[i], proj.v[i])?;
                occupancy[cell] = true;
                zbuffer[cell] = zbuffer[cell].min(proj.depth[i]);
                Some(cell)
            })
            .collect();
        Ok(Self {
            grid,
            point_cell,
            occupancy,
            zbuffer,
        })
    }

    /// True if point `i` projects into a cell and lies within `margin` of
    /// that cell's nearest surface.
    pub fn is_visible(&self, i: usize, depth: f64, margin: f64) -> bool {
        match self.point_cell[i] {
            Some(cell) => depth <= self.zbuffer[cell] + margin,
            None => false,
        }
    }
}

/// Averages point features into their cells: a `[rows·cols, C]` map whose
/// empty cells are zero. Differentiable with respect to `point_features`.
pub fn rasterize_features(tape: &mut Tape, plan: &RasterPlan, point_features: Var) -> Result<Var> {
    if tape.shape(point_features).first() != Some(&plan.point_cell.len()) {
        return Err(Error::dim(
            "rasterize_features",
            tape.shape(point_features),
            &[plan.point_cell.len()],
        ));
    }
    tape.segment_mean(point_features, &plan.point_cell, plan.grid.num_cells())
}
