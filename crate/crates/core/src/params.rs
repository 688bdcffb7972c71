//! Flat trainable parameter store and its checkpoint file.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes   "HMAP"
//! version    u32       1
//! slices     u32       number of layout entries
//! per slice: name_len u32, name (utf-8), rows u32, cols u32, trainable u8
//! count      u64       total number of values
//! values     count x f64 (IEEE-754 bits, LE)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayView2;
use rand::Rng;

use crate::autodiff::{Grads, Tape, Tensor, Var};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HMAP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlice {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub trainable: bool,
}

impl ParamSlice {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    grads: Vec<f64>,
    layout: Vec<ParamSlice>,
}

/// Tape leaves for every slice of a [`ParameterVector`], in layout order.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a slice and returns its layout index.
    pub fn push(&mut self, name: &str, init: Tensor, trainable: bool) -> usize {
        let (rows, cols) = init.dim();
        let offset = self.values.len();
        self.values.extend(init.iter().copied());
        self.grads.resize(self.values.len(), 0.0);
        self.layout.push(ParamSlice {
            name: name.to_string(),
            rows,
            cols,
            offset,
            trainable,
        });
        self.layout.len() - 1
    }

    /// Uniform init in `[-scale, scale]`.
    pub fn push_uniform(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> usize {
        let init = Tensor::from_shape_fn((rows, cols), |_| rng.gen_range(-scale..=scale));
        self.push(name, init, true)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layout(&self) -> &[ParamSlice] {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grads(&self) -> &[f64] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [f64] {
        &mut self.grads
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.layout.iter().position(|s| s.name == name)
    }

    pub fn view(&self, idx: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout[idx];
        ArrayView2::from_shape((s.rows, s.cols), &self.values[s.range()]).expect("layout shape")
    }

    pub fn tensor(&self, idx: usize) -> Tensor {
        self.view(idx).to_owned()
    }

    pub fn set(&mut self, idx: usize, value: &Tensor) {
        let s = self.layout[idx].clone();
        assert_eq!(value.dim(), (s.rows, s.cols), "shape of {}", s.name);
        for (dst, src) in self.values[s.range()].iter_mut().zip(value.iter()) {
            *dst = *src;
        }
    }

    /// Marks every slice whose name satisfies `pred` as trainable, all others frozen.
    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool) {
        for s in &mut self.layout {
            s.trainable = pred(&s.name);
        }
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for s in &self.layout {
            if s.trainable {
                mask[s.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let vars = (0..self.layout.len())
            .map(|i| tape.leaf(self.tensor(i)))
            .collect();
        Bound { vars }
    }

    /// Adds the tape gradients of the bound leaves into the gradient store.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Grads) {
        for (i, v) in bound.vars.iter().enumerate() {
            if let Some(g) = grads.get(*v) {
                let r = self.layout[i].range();
                for (dst, src) in self.grads[r].iter_mut().zip(g.iter()) {
                    *dst += *src;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn scale_grads(&mut self, k: f64) {
        self.grads.iter_mut().for_each(|g| *g *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `sum (a - b)^2` over slices selected by `pred`.
    pub fn squared_distance(&self, other: &ParameterVector, pred: impl Fn(&ParamSlice) -> bool) -> f64 {
        self.layout
            .iter()
            .filter(|s| pred(s))
            .flat_map(|s| s.range())
            .map(|i| (self.values[i] - other.values[i]).powi(2))
            .sum()
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.layout.len() as u32)?;
        for s in &self.layout {
            w.write_u32::<LittleEndian>(s.name.len() as u32)?;
            w.write_all(s.name.as_bytes())?;
            w.write_u32::<LittleEndian>(s.rows as u32)?;
            w.write_u32::<LittleEndian>(s.cols as u32)?;
            w.write_u8(s.trainable as u8)?;
        }
        w.write_u64::<LittleEndian>(self.values.len() as u64)?;
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Data("not a parameter checkpoint (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut out = ParameterVector::new();
        let mut offset = 0;
        for _ in 0..n {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Data("slice name is not utf-8".into()))?;
            let rows = r.read_u32::<LittleEndian>()? as usize;
            let cols = r.read_u32::<LittleEndian>()? as usize;
            let trainable = r.read_u8()? != 0;
            out.layout.push(ParamSlice {
                name,
                rows,
                cols,
                offset,
                trainable,
            });
            offset += rows * cols;
        }
        let count = r.read_u64::<LittleEndian>()? as usize;
        if count != offset {
            return Err(Error::Data(format!(
                "checkpoint declares {count} values but layout needs {offset}"
            )));
        }
        out.values = (0..count)
            .map(|_| r.read_f64::<LittleEndian>())
            .collect::<std::io::Result<_>>()?;
        out.grads = vec![0.0; count];
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path)
            .map_err(|e| Error::Config(format!("cannot open checkpoint {}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// True when both stores have identical names, shapes and value bits.
    pub fn bit_identical(&self, other: &ParameterVector) -> bool {
        self.layout == other.layout
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = ParameterVector::new();
            p.push_uniform("a.w", rows, cols, 1.0, &mut rng);
            p.push("b.bias", Tensor::from_elem((1, cols), f64::MIN_POSITIVE), false);
            p.values_mut()[0] = -0.0;
            let mut buf = Vec::new();
            p.write_to(&mut buf).unwrap();
            let q = ParameterVector::read_from(&buf[..]).unwrap();
            prop_assert!(p.bit_identical(&q));
            prop_assert_eq!(q.layout()[1].trainable, false);
        }
    }

    #[test]
    fn corrupt_checkpoint_is_rejected() {
        assert!(matches!(
            ParameterVector::read_from(&b"NOPE\x01\0\0\0"[..]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn accumulate_and_distance() {
        let mut p = ParameterVector::new();
        p.push("x", Tensor::from_elem((1, 2), 1.0), true);
        p.push("y", Tensor::from_elem((1, 1), 3.0), false);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let s = tape.square(b.var(0));
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        p.accumulate(&b, &g);
        assert_eq!(p.grads(), &[2.0, 2.0, 0.0]);
        let mut q = p.clone();
        q.values_mut()[0] = 3.0;
        assert_eq!(q.squared_distance(&p, |s| s.trainable), 4.0);
        assert_eq!(p.trainable_mask(), vec![true, true, false]);
    }
}
