//! Encoder/decoder layer stacks.
//!
//! The encoder maps a scaled `(nx, ny, 2)` snapshot to `2 * latent_dim`
//! values: the mean followed by the log-variance. A single dense layer of
//! width `2L` split in halves is the same map as two parallel width-`L`
//! heads. The decoder starts with a concat of `z` and the measurement
//! vector and must end in an `(nx, ny, 2)` image.

use flowrecon_core::Grid;
use flowrecon_nn::LayerSpec::{self, *};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScvaeArchitecture {
    pub name: String,
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

fn default_latent() -> usize {
    2
}

fn chain(specs: &[LayerSpec], mut shape: Vec<usize>, part: &str) -> Result<Vec<usize>> {
    for (i, s) in specs.iter().enumerate() {
        shape = s.output_shape(&shape).map_err(|m| Error::Config(format!("{part} layer {i} ({}): {m}", s.kind())))?;
    }
    Ok(shape)
}

impl ScvaeArchitecture {
    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.nx, self.ny, 2]
    }

    /// Checks both stacks against a grid and a measurement count `2M`.
    pub fn validate(&self, grid: &Grid, n_measurements: usize) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be at least 1".into()));
        }
        if (grid.nx, grid.ny) != (self.nx, self.ny) {
            return Err(Error::Config(format!(
                "architecture {} is for a {}x{} grid, data is {}x{}",
                self.name, self.nx, self.ny, grid.nx, grid.ny
            )));
        }
        if self.encoder.contains(&Concat) {
            return Err(Error::Config("the encoder takes the snapshot only; it cannot concat".into()));
        }
        let enc = chain(&self.encoder, self.input_shape(), "encoder")?;
        if enc != [2 * self.latent_dim] {
            return Err(Error::Config(format!(
                "encoder must end in {} values (mean and log-variance), ends in {enc:?}",
                2 * self.latent_dim
            )));
        }
        if self.decoder.first() != Some(&Concat) {
            return Err(Error::Config("decoder must start with a concat layer".into()));
        }
        let dec = chain(&self.decoder[1..], vec![self.latent_dim + n_measurements], "decoder")?;
        if dec != self.input_shape() {
            return Err(Error::Config(format!("decoder ends in {dec:?}, expected {:?}", self.input_shape())));
        }
        Ok(())
    }

    /// Shape after every encoder layer.
    pub fn encoder_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape();
        let mut out = Vec::new();
        for s in &self.encoder {
            shape = chain(std::slice::from_ref(s), shape, "encoder")?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    /// Cylinder-wake stacks for a 160x50 grid: pad to 168x56, two stride-2
    /// convolutions (160, 200 filters) to 42x14x200, a 64-wide dense layer,
    /// and the mirrored decoder with a final crop.
    pub fn cylinder(latent_dim: usize) -> Self {
        Self {
            name: "cylinder".into(),
            nx: 160,
            ny: 50,
            latent_dim,
            encoder: vec![
                ZeroPad { ph: 4, pw: 3 },
                Conv2d { filters: 160, kernel: 2, stride: 2 },
                Relu,
                Conv2d { filters: 200, kernel: 2, stride: 2 },
                Relu,
                Flatten,
                Dense { units: 64 },
                Relu,
                Dense { units: 2 * latent_dim },
            ],
            decoder: vec![
                Concat,
                Dense { units: 42 * 14 * 200 },
                Relu,
                Reshape { shape: vec![42, 14, 200] },
                Conv2dTranspose { filters: 200, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: 160, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: 2, kernel: 1, stride: 1 },
                Linear,
                Crop { ch: 4, cw: 3 },
            ],
        }
    }

    /// Ocean-model stacks for a 32x32 grid: convolutions with 64 and 128
    /// filters to 8x8x128 and a 16-wide dense layer.
    pub fn ocean(latent_dim: usize) -> Self {
        Self {
            name: "ocean".into(),
            nx: 32,
            ny: 32,
            latent_dim,
            encoder: vec![
                Conv2d { filters: 64, kernel: 2, stride: 2 },
                Relu,
                Conv2d { filters: 128, kernel: 2, stride: 2 },
                Relu,
                Flatten,
                Dense { units: 16 },
                Relu,
                Dense { units: 2 * latent_dim },
            ],
            decoder: vec![
                Concat,
                Dense { units: 8 * 8 * 128 },
                Relu,
                Reshape { shape: vec![8, 8, 128] },
                Conv2dTranspose { filters: 64, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: 128, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: 2, kernel: 1, stride: 1 },
                Linear,
            ],
        }
    }

    /// Same shape as [`ScvaeArchitecture::ocean`] with `c1`/`c2` filters,
    /// for any grid whose sides are multiples of 4. Sized for CPU runs.
    pub fn desk(nx: usize, ny: usize, c1: usize, c2: usize, latent_dim: usize) -> Result<Self> {
        if nx % 4 != 0 || ny % 4 != 0 || nx == 0 || ny == 0 {
            return Err(Error::Config(format!("desk architecture needs sides divisible by 4, got {nx}x{ny}")));
        }
        let (hx, hy) = (nx / 4, ny / 4);
        Ok(Self {
            name: "desk".into(),
            nx,
            ny,
            latent_dim,
            encoder: vec![
                Conv2d { filters: c1, kernel: 2, stride: 2 },
                Relu,
                Conv2d { filters: c2, kernel: 2, stride: 2 },
                Relu,
                Flatten,
                Dense { units: 16 },
                Relu,
                Dense { units: 2 * latent_dim },
            ],
            decoder: vec![
                Concat,
                Dense { units: hx * hy * c2 },
                Relu,
                Reshape { shape: vec![hx, hy, c2] },
                Conv2dTranspose { filters: c2, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: c1, kernel: 2, stride: 2 },
                Relu,
                Conv2dTranspose { filters: 2, kernel: 1, stride: 1 },
                Linear,
            ],
        })
    }

    /// 8x8 grid, one convolution each way; for gradient checks. The decoder
    /// keeps 32 channels ahead of its 2x2 transposed convolution so each
    /// output block of 8 values is reachable.
    pub fn tiny(latent_dim: usize) -> Self {
        Self {
            name: "tiny".into(),
            nx: 8,
            ny: 8,
            latent_dim,
            encoder: vec![Conv2d { filters: 3, kernel: 2, stride: 2 }, Relu, Flatten, Dense { units: 2 * latent_dim }],
            decoder: vec![
                Concat,
                Dense { units: 4 * 4 * 32 },
                Relu,
                Reshape { shape: vec![4, 4, 32] },
                Conv2dTranspose { filters: 2, kernel: 2, stride: 2 },
            ],
        }
    }

    /// Preset by name; `desk` adapts to the grid.
    pub fn preset(name: &str, grid: &Grid) -> Result<Self> {
        match name {
            "cylinder" => Ok(Self::cylinder(2)),
            "ocean" => Ok(Self::ocean(2)),
            "tiny" => Ok(Self::tiny(2)),
            "desk" => Self::desk(grid.nx, grid.ny, DESK_FILTERS.0, DESK_FILTERS.1, 2),
            other => Err(Error::Config(format!("unknown architecture preset {other:?}"))),
        }
    }
}

/// Filter counts of the desk preset.
pub const DESK_FILTERS: (usize, usize) = (8, 16);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        let g = |nx, ny| Grid::new(nx, ny, 1.0, 1.0).unwrap();
        ScvaeArchitecture::cylinder(2).validate(&g(160, 50), 10).unwrap();
        ScvaeArchitecture::ocean(2).validate(&g(32, 32), 6).unwrap();
        ScvaeArchitecture::tiny(2).validate(&g(8, 8), 4).unwrap();
        ScvaeArchitecture::desk(64, 32, 8, 16, 2).unwrap().validate(&g(64, 32), 4).unwrap();
        assert!(ScvaeArchitecture::desk(62, 32, 8, 16, 2).is_err());
        assert!(ScvaeArchitecture::tiny(2).validate(&g(8, 9), 4).is_err());
    }

    #[test]
    fn cylinder_bottleneck_shape() {
        let s = ScvaeArchitecture::cylinder(2).encoder_shapes().unwrap();
        assert_eq!(s[0], [168, 56, 2]);
        assert_eq!(s[3], [42, 14, 200]);
        assert_eq!(s.last().unwrap(), &[4]);
    }

    #[test]
    fn rejects_malformed_stacks() {
        let g = Grid::new(8, 8, 1.0, 1.0).unwrap();
        let mut a = ScvaeArchitecture::tiny(2);
        a.decoder.remove(0);
        assert!(a.validate(&g, 4).is_err());
        let mut a = ScvaeArchitecture::tiny(2);
        a.encoder.pop();
        assert!(a.validate(&g, 4).is_err());
        let mut a = ScvaeArchitecture::tiny(2);
        a.latent_dim = 0;
        assert!(a.validate(&g, 4).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let a = ScvaeArchitecture::ocean(3);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ScvaeArchitecture>(&s).unwrap(), a);
    }
}
