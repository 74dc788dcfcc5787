use crate::error::{Error, Result};

/// A C×V real-valued field on one mesh level, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelField {
    level: usize,
    channels: usize,
    vertices: usize,
    data: Vec<f64>,
}

impl ChannelField {
    pub fn new(level: usize, channels: usize, vertices: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("a field needs at least one channel"));
        }
        if data.len() != channels * vertices {
            return Err(Error::shape(format!(
                "field data has {} values, expected {channels}x{vertices}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("field entry {i}")));
        }
        Ok(ChannelField {
            level,
            channels,
            vertices,
            data,
        })
    }

    pub fn zeros(level: usize, channels: usize, vertices: usize) -> Self {
        Self::constant(level, channels, vertices, 0.0)
    }

    pub fn constant(level: usize, channels: usize, vertices: usize, value: f64) -> Self {
        assert!(channels > 0 && value.is_finite());
        ChannelField {
            level,
            channels,
            vertices,
            data: vec![value; channels * vertices],
        }
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.vertices..(c + 1) * self.vertices]
    }

    pub fn get(&self, c: usize, v: usize) -> f64 {
        self.data[c * self.vertices + v]
    }

    pub fn same_shape(&self, other: &ChannelField) -> bool {
        self.level == other.level
            && self.channels == other.channels
            && self.vertices == other.vertices
    }

    pub fn check_same_shape(&self, other: &ChannelField) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "fields differ: level {} {}x{} vs level {} {}x{}",
                self.level,
                self.channels,
                self.vertices,
                other.level,
                other.channels,
                other.vertices
            )))
        }
    }

    pub fn abs_max(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ChannelField::new(
            self.level,
            self.channels,
            self.vertices,
            self.data.iter().map(|&x| f(x)).collect(),
        )
    }

    /// Stacks fields along the channel axis.
    pub fn concat(parts: &[&ChannelField]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for p in parts {
            if p.level != first.level || p.vertices != first.vertices {
                return Err(Error::shape("concatenated fields must share level and vertices"));
            }
            data.extend_from_slice(&p.data);
            channels += p.channels;
        }
        Ok(ChannelField {
            level: first.level,
            channels,
            vertices: first.vertices,
            data,
        })
    }

    /// Vertexwise arithmetic mean of equally shaped fields.
    pub fn mean(fields: &[&ChannelField]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of zero fields".into()))?;
        let mut acc = vec![0.0; first.data.len()];
        for f in fields {
            first.check_same_shape(f)?;
            for (a, x) in acc.iter_mut().zip(&f.data) {
                *a += x;
            }
        }
        let n = fields.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        ChannelField::new(first.level, first.channels, first.vertices, acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_lengths_and_nan() {
        assert!(ChannelField::new(0, 2, 3, vec![0.0; 5]).is_err());
        assert!(matches!(
            ChannelField::new(0, 1, 2, vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(ChannelField::new(0, 0, 2, vec![]).is_err());
    }

    #[test]
    fn mean_and_concat() {
        let a = ChannelField::new(0, 1, 2, vec![1.0, 0.0]).unwrap();
        let b = ChannelField::new(0, 1, 2, vec![0.0, 1.0]).unwrap();
        assert_eq!(ChannelField::mean(&[&a, &b]).unwrap().data(), &[0.5, 0.5]);
        let c = ChannelField::concat(&[&a, &b]).unwrap();
        assert_eq!(c.channels(), 2);
        assert_eq!(c.channel(1), &[0.0, 1.0]);
    }
}
