//! Plain-text raster export of fields and model posteriors.
//!
//! Layout:
//!
//! ```text
//! # sparbo raster v1
//! bounds <xmin> <xmax> <ymin> <ymax>
//! step <step>
//! rows <rows>
//! cols <cols>
//! layers <name> [<name> ...]
//! layer <name>
//! <cols values>      (rows lines, first line is y = ymin)
//! ...
//! ```
//!
//! Cell `(r, c)` sits at `(xmin + c * step, ymin + r * step)`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{Point2, QualityField, Region};
use crate::spar::SparModel;

const MAGIC: &str = "# sparbo raster v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.xmax, self.ymin, self.ymax, self.step]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.step <= 0.0 || self.xmax < self.xmin || self.ymax < self.ymin {
            return Err(Error::InvalidParameter(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    pub fn cols(&self) -> usize {
        ((self.xmax - self.xmin) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn rows(&self) -> usize {
        ((self.ymax - self.ymin) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn cell(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.xmin + col as f64 * self.step,
            self.ymin + row as f64 * self.step,
        )
    }

    /// Bounding box of the regions (or, without regions, of the peaks with a
    /// three-decay-length margin).
    pub fn covering(field: &QualityField, regions: &[Region], step: f64) -> Result<GridSpec> {
        let boxes: Vec<(Point2, f64)> = if regions.is_empty() {
            field
                .peaks
                .iter()
                .map(|p| (p.center, 3.0 * p.decay_length))
                .collect()
        } else {
            regions.iter().map(|r| (r.center, r.radius)).collect()
        };
        if boxes.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot infer grid bounds from an empty field; pass --bounds".into(),
            ));
        }
        let mut g = GridSpec {
            xmin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymin: f64::INFINITY,
            ymax: f64::NEG_INFINITY,
            step,
        };
        for (c, m) in boxes {
            g.xmin = g.xmin.min(c.x - m);
            g.xmax = g.xmax.max(c.x + m);
            g.ymin = g.ymin.min(c.y - m);
            g.ymax = g.ymax.max(c.y + m);
        }
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub grid: GridSpec,
    /// Named layers, each row-major with `rows * cols` values.
    pub layers: Vec<(String, Vec<f64>)>,
}

impl Raster {
    fn sample(grid: GridSpec, names: &[&str], mut f: impl FnMut(Point2) -> Vec<f64>) -> Result<Raster> {
        grid.validate()?;
        let mut layers: Vec<(String, Vec<f64>)> = names
            .iter()
            .map(|n| (n.to_string(), Vec::with_capacity(grid.rows() * grid.cols())))
            .collect();
        for r in 0..grid.rows() {
            for c in 0..grid.cols() {
                for (layer, v) in layers.iter_mut().zip(f(grid.cell(r, c))) {
                    layer.1.push(v);
                }
            }
        }
        Ok(Raster { grid, layers })
    }

    pub fn of_field(field: &QualityField, grid: GridSpec) -> Result<Raster> {
        Raster::sample(grid, &["quality"], |p| vec![field.eval(p)])
    }

    /// Posterior mean and standard deviation of a model.
    pub fn of_model(model: &SparModel, grid: GridSpec) -> Result<Raster> {
        Raster::sample(grid, &["mean", "std"], |p| {
            let (m, s) = model.predict(p);
            vec![m, s]
        })
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn value(&self, layer: &str, row: usize, col: usize) -> Option<f64> {
        self.layer(layer)
            .and_then(|v| v.get(row * self.grid.cols() + col).copied())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "bounds {} {} {} {}", g.xmin, g.xmax, g.ymin, g.ymax)?;
        writeln!(w, "step {}", g.step)?;
        writeln!(w, "rows {}", g.rows())?;
        writeln!(w, "cols {}", g.cols())?;
        let names: Vec<&str> = self.layers.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(w, "layers {}", names.join(" "))?;
        for (name, values) in &self.layers {
            writeln!(w, "layer {name}")?;
            for row in values.chunks(g.cols()) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(f))
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Raster> {
        let bad = |msg: &str| Error::Config(format!("malformed raster: {msg}"));
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(Error::from)
        };
        if next()? != MAGIC {
            return Err(bad("missing header"));
        }
        let nums = |line: String, key: &str| -> Result<Vec<f64>> {
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| bad(&format!("expected '{key}'")))?;
            rest.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(&format!("bad number '{t}'"))))
                .collect()
        };
        let b = nums(next()?, "bounds")?;
        let step = nums(next()?, "step")?;
        let rows = nums(next()?, "rows")?;
        let cols = nums(next()?, "cols")?;
        if b.len() != 4 || step.len() != 1 || rows.len() != 1 || cols.len() != 1 {
            return Err(bad("header field counts"));
        }
        let grid = GridSpec {
            xmin: b[0],
            xmax: b[1],
            ymin: b[2],
            ymax: b[3],
            step: step[0],
        };
        let (rows, cols) = (rows[0] as usize, cols[0] as usize);
        if rows != grid.rows() || cols != grid.cols() {
            return Err(bad("row/column counts disagree with bounds"));
        }
        let names_line = next()?;
        let names: Vec<String> = names_line
            .strip_prefix("layers")
            .ok_or_else(|| bad("expected 'layers'"))?
            .split_whitespace()
            .map(str::to_string)
            .collect();
        let mut layers = Vec::new();
        for name in names {
            if next()? != format!("layer {name}") {
                return Err(bad(&format!("expected layer {name}")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let row = nums(next()?, "")?;
                if row.len() != cols {
                    return Err(bad("row length"));
                }
                values.extend(row);
            }
            layers.push((name, values));
        }
        Ok(Raster { grid, layers })
    }
}
