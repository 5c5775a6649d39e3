//! Complex fields sampled on uniform planar grids.
//!
//! A field stores baseband samples together with an optional carrier
//! frequency: the represented function is `f(x) = stored(x) e(x . carrier)`
//! with `e(t) = exp(2 pi i t)`. Pointwise magnitudes, and therefore all `L^p`
//! quantities, are carrier-independent; the carrier only shifts where the
//! spectrum sits, which keeps grids for band-limited data near the curve
//! (frequencies of size up to `2^d`) at desk-scale memory.

use num_complex::Complex64;
use rustfft::FftPlanner;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Geometry of a sample grid: `nx x ny` points at `origin + (ix, iy) * spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    /// Carrier frequency of the stored baseband samples.
    pub carrier: Vec2,
}

impl GridSpec {
    pub fn new(origin: Vec2, spacing: f64, nx: usize, ny: usize) -> Result<Self> {
        Self::with_carrier(origin, spacing, nx, ny, Vec2::ZERO)
    }

    pub fn with_carrier(
        origin: Vec2,
        spacing: f64,
        nx: usize,
        ny: usize,
        carrier: Vec2,
    ) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::validation("grid spacing must be positive"));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::validation("grid extent must be at least 1 x 1"));
        }
        Ok(GridSpec { origin, spacing, nx, ny, carrier })
    }

    /// Square grid covering `[-half, half]^2` with `n` points per axis.
    pub fn centered_square(half: f64, n: usize, carrier: Vec2) -> Result<Self> {
        let spacing = 2.0 * half / n as f64;
        Self::with_carrier(Vec2::new(-half, -half), spacing, n, n, carrier)
    }

    pub fn point(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(
            self.origin.x + ix as f64 * self.spacing,
            self.origin.y + iy as f64 * self.spacing,
        )
    }

    /// Frequency-bin spacing along each axis.
    pub fn freq_resolution(&self) -> (f64, f64) {
        (
            1.0 / (self.nx as f64 * self.spacing),
            1.0 / (self.ny as f64 * self.spacing),
        )
    }

    /// The frequency represented by DFT bin `(kx, ky)` (carrier included).
    pub fn bin_frequency(&self, kx: usize, ky: usize) -> Vec2 {
        let wrap = |k: usize, n: usize| -> f64 {
            let k = k as i64;
            let n = n as i64;
            (if k < (n + 1) / 2 { k } else { k - n }) as f64
        };
        Vec2::new(
            wrap(kx, self.nx) / (self.nx as f64 * self.spacing) + self.carrier.x,
            wrap(ky, self.ny) / (self.ny as f64 * self.spacing) + self.carrier.y,
        )
    }

    /// Nearest exactly representable frequency to `target`.
    pub fn snap_frequency(&self, target: Vec2) -> Vec2 {
        let (rx, ry) = self.freq_resolution();
        Vec2::new(
            self.carrier.x + ((target.x - self.carrier.x) / rx).round() * rx,
            self.carrier.y + ((target.y - self.carrier.y) / ry).round() * ry,
        )
    }
}

/// A complex-valued function sampled on a uniform grid (row-major, `iy` outer).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub carrier: Vec2,
    pub samples: Vec<Complex64>,
}

impl Field {
    pub fn zeros(spec: &GridSpec) -> Field {
        Field {
            origin: spec.origin,
            spacing: spec.spacing,
            nx: spec.nx,
            ny: spec.ny,
            carrier: spec.carrier,
            samples: vec![Complex64::new(0.0, 0.0); spec.nx * spec.ny],
        }
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            origin: self.origin,
            spacing: self.spacing,
            nx: self.nx,
            ny: self.ny,
            carrier: self.carrier,
        }
    }

    pub fn point(&self, ix: usize, iy: usize) -> Vec2 {
        self.spec().point(ix, iy)
    }

    pub fn at(&self, ix: usize, iy: usize) -> Complex64 {
        self.samples[iy * self.nx + ix]
    }

    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut Complex64 {
        &mut self.samples[iy * self.nx + ix]
    }

    /// Synthesize `sum_m amp_m e(x . freq_m)` on the grid. Frequencies are
    /// absolute; the stored samples are demodulated by the grid carrier.
    pub fn from_modes(spec: &GridSpec, modes: &[(Vec2, Complex64)]) -> Field {
        let mut f = Field::zeros(spec);
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                let x = spec.point(ix, iy);
                let mut v = Complex64::new(0.0, 0.0);
                for &(freq, amp) in modes {
                    let phase =
                        2.0 * std::f64::consts::PI * (x.dot(freq) - x.dot(spec.carrier));
                    v += amp * Complex64::new(phase.cos(), phase.sin());
                }
                *f.at_mut(ix, iy) = v;
            }
        }
        f
    }

    /// `(sum |f|^2 h^2)^(1/2)` over the whole grid.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.samples.iter().map(|c| c.norm_sqr()).sum();
        (s * self.spacing * self.spacing).sqrt()
    }

    pub fn scaled(&self, k: Complex64) -> Field {
        let mut out = self.clone();
        for v in out.samples.iter_mut() {
            *v *= k;
        }
        out
    }

    /// Add `other` into `self`; grids must agree exactly.
    pub fn add_assign_field(&mut self, other: &Field) -> Result<()> {
        if self.spec() != other.spec() {
            return Err(Error::validation("field grids do not match"));
        }
        for (a, b) in self.samples.iter_mut().zip(other.samples.iter()) {
            *a += *b;
        }
        Ok(())
    }

    /// Forward DFT of the samples (unnormalized).
    pub fn dft(&self) -> Vec<Complex64> {
        let mut data = self.samples.clone();
        fft2_inplace(&mut data, self.nx, self.ny, false);
        data
    }

    /// Replace samples by the inverse DFT of `spectrum` (normalized).
    pub fn set_from_spectrum(&mut self, mut spectrum: Vec<Complex64>) {
        fft2_inplace(&mut spectrum, self.nx, self.ny, true);
        self.samples = spectrum;
    }

    /// Flat binary layout: origin, spacing, carrier, dims as little-endian
    /// 64-bit values, then row-major (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for v in [
            self.origin.x,
            self.origin.y,
            self.spacing,
            self.carrier.x,
            self.carrier.y,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.nx as u64).to_le_bytes())?;
        w.write_all(&(self.ny as u64).to_le_bytes())?;
        for c in &self.samples {
            w.write_all(&c.re.to_le_bytes())?;
            w.write_all(&c.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> std::io::Result<Field> {
        let mut f64buf = [0u8; 8];
        let mut read_f64 = |r: &mut R| -> std::io::Result<f64> {
            r.read_exact(&mut f64buf)?;
            Ok(f64::from_le_bytes(f64buf))
        };
        let ox = read_f64(&mut r)?;
        let oy = read_f64(&mut r)?;
        let spacing = read_f64(&mut r)?;
        let cx = read_f64(&mut r)?;
        let cy = read_f64(&mut r)?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let nx = u64::from_le_bytes(u64buf) as usize;
        r.read_exact(&mut u64buf)?;
        let ny = u64::from_le_bytes(u64buf) as usize;
        let mut samples = Vec::with_capacity(nx * ny);
        let mut pair = [0u8; 16];
        for _ in 0..nx * ny {
            r.read_exact(&mut pair)?;
            samples.push(Complex64::new(
                f64::from_le_bytes(pair[..8].try_into().unwrap()),
                f64::from_le_bytes(pair[8..].try_into().unwrap()),
            ));
        }
        Ok(Field {
            origin: Vec2::new(ox, oy),
            spacing,
            nx,
            ny,
            carrier: Vec2::new(cx, cy),
            samples,
        })
    }

    /// CSV dump (`x,y,re,im` per sample) for small grids.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,y,re,im")?;
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let p = self.point(ix, iy);
                let c = self.at(ix, iy);
                writeln!(w, "{},{},{},{}", p.x, p.y, c.re, c.im)?;
            }
        }
        Ok(())
    }
}

/// In-place 2D FFT, rows then columns. Forward is unnormalized; the inverse
/// divides by `nx * ny` so the pair round-trips.
pub fn fft2_inplace(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    assert_eq!(data.len(), nx * ny);
    let mut planner = FftPlanner::new();
    let row_fft = if inverse {
        planner.plan_fft_inverse(nx)
    } else {
        planner.plan_fft_forward(nx)
    };
    for row in data.chunks_exact_mut(nx) {
        row_fft.process(row);
    }
    let mut tr = vec![Complex64::new(0.0, 0.0); nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            tr[ix * ny + iy] = data[iy * nx + ix];
        }
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(ny)
    } else {
        planner.plan_fft_forward(ny)
    };
    for col in tr.chunks_exact_mut(ny) {
        col_fft.process(col);
    }
    for ix in 0..nx {
        for iy in 0..ny {
            data[iy * nx + ix] = tr[ix * ny + iy];
        }
    }
    if inverse {
        let scale = 1.0 / (nx as f64 * ny as f64);
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_round_trip() {
        let spec = GridSpec::new(Vec2::ZERO, 0.5, 16, 8).unwrap();
        let mut f = Field::zeros(&spec);
        for (i, v) in f.samples.iter_mut().enumerate() {
            *v = Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
        }
        let orig = f.clone();
        let spectrum = f.dft();
        f.set_from_spectrum(spectrum);
        for (a, b) in f.samples.iter().zip(orig.samples.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_mode_lands_in_one_bin() {
        let spec = GridSpec::with_carrier(Vec2::ZERO, 0.25, 16, 16, Vec2::new(1.0, 2.0)).unwrap();
        let freq = spec.bin_frequency(3, 13);
        let f = Field::from_modes(&spec, &[(freq, Complex64::new(2.0, 0.0))]);
        let spectrum = f.dft();
        let total: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
        let peak = spectrum[13 * 16 + 3].norm_sqr();
        assert!((peak / total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let spec =
            GridSpec::with_carrier(Vec2::new(-1.0, 2.0), 0.125, 5, 3, Vec2::new(1.5, 3.375))
                .unwrap();
        let mut f = Field::zeros(&spec);
        for (i, v) in f.samples.iter_mut().enumerate() {
            *v = Complex64::new(i as f64, -(i as f64) / 3.0);
        }
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = Field::read_binary(&buf[..]).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn parseval_on_grid() {
        let spec = GridSpec::new(Vec2::ZERO, 0.5, 32, 32).unwrap();
        let f = Field::from_modes(
            &spec,
            &[
                (spec.bin_frequency(2, 5), Complex64::new(1.0, 0.5)),
                (spec.bin_frequency(9, 1), Complex64::new(-0.3, 0.2)),
            ],
        );
        let direct = f.l2_norm().powi(2);
        let spectrum = f.dft();
        let n = (spec.nx * spec.ny) as f64;
        let via_freq: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>()
            * spec.spacing
            * spec.spacing
            / n;
        assert!((direct - via_freq).abs() / direct < 1e-12);
    }
}
