use super::WindowedSample;
use crate::error::{Error, Result};
use crate::model::{Batch, LAB_BIN_HOURS, LAB_COUNT, VITAL_COUNT};
use crate::numeric::Tensor;

/// Normalized samples packed into contiguous arrays for batching.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    window: usize,
    ids: Vec<String>,
    vitals: Vec<f64>,
    labs: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn from_samples(window: usize, samples: &[WindowedSample]) -> Result<Self> {
        let (vl, ll) = (window * VITAL_COUNT, window / LAB_BIN_HOURS * LAB_COUNT);
        let mut ds = Dataset {
            window,
            ids: Vec::with_capacity(samples.len()),
            vitals: Vec::with_capacity(samples.len() * vl),
            labs: Vec::with_capacity(samples.len() * ll),
            labels: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            if s.window != window || s.vitals.len() != vl || s.labs.len() != ll {
                return Err(Error::config(format!("sample {} does not match a {window}h window", s.patient_id)));
            }
            ds.ids.push(s.patient_id.clone());
            ds.vitals.extend_from_slice(&s.vitals);
            ds.labs.extend_from_slice(&s.labs);
            ds.labels.push(f64::from(s.label));
        }
        Ok(ds)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y >= 0.5).count()
    }

    /// Model inputs and labels for the given sample indices, in order.
    pub fn batch(&self, indices: &[usize]) -> (Batch, Vec<f64>) {
        let (vl, ll) = (self.window * VITAL_COUNT, self.window / LAB_BIN_HOURS * LAB_COUNT);
        let mut v = Vec::with_capacity(indices.len() * vl);
        let mut l = Vec::with_capacity(indices.len() * ll);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            v.extend_from_slice(&self.vitals[i * vl..(i + 1) * vl]);
            l.extend_from_slice(&self.labs[i * ll..(i + 1) * ll]);
            y.push(self.labels[i]);
        }
        let b = indices.len();
        let batch = Batch {
            vitals: Tensor::new(vec![b, self.window, VITAL_COUNT], v).expect("validated on construction"),
            labs: Tensor::new(vec![b, self.window / LAB_BIN_HOURS, LAB_COUNT], l).expect("validated on construction"),
        };
        (batch, y)
    }
}
