//! Single-channel 2-D planes and lane-wise 1-D operator application.
//!
//! `Axis::Cols` runs an operator down each column (along axis 0),
//! `Axis::Rows` along each row (axis 1).

#[derive(Clone)]
pub(crate) struct Plane {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Copy)]
pub(crate) enum Axis {
    Rows,
    Cols,
}

impl Plane {
    pub(crate) fn zeros(rows: usize, cols: usize) -> Self {
        Plane { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn lanes(&self, axis: Axis) -> (usize, usize) {
        match axis {
            Axis::Rows => (self.rows, self.cols),
            Axis::Cols => (self.cols, self.rows),
        }
    }

    fn get_lane(&self, axis: Axis, i: usize, buf: &mut [f64]) {
        match axis {
            Axis::Rows => buf.copy_from_slice(&self.data[i * self.cols..][..self.cols]),
            Axis::Cols => {
                for (r, b) in buf.iter_mut().enumerate() {
                    *b = self.data[r * self.cols + i];
                }
            }
        }
    }

    fn put_lane(&mut self, axis: Axis, i: usize, buf: &[f64]) {
        match axis {
            Axis::Rows => self.data[i * self.cols..][..self.cols].copy_from_slice(buf),
            Axis::Cols => {
                for (r, b) in buf.iter().enumerate() {
                    self.data[r * self.cols + i] = *b;
                }
            }
        }
    }

    fn with_len(&self, axis: Axis, len: usize) -> Plane {
        match axis {
            // `Rows` lanes run along the column index (axis 1).
            Axis::Rows => Plane::zeros(self.rows, len),
            Axis::Cols => Plane::zeros(len, self.cols),
        }
    }

    /// Applies a lane map along `axis` (Cols = along axis 0, Rows = along axis 1).
    pub(crate) fn map1(&self, axis: Axis, out_len: usize, f: impl Fn(&[f64], &mut [f64])) -> Plane {
        let (n, len) = self.lanes(axis);
        let mut out = self.with_len(axis, out_len);
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; out_len];
        for i in 0..n {
            self.get_lane(axis, i, &mut a);
            f(&a, &mut b);
            out.put_lane(axis, i, &b);
        }
        out
    }

    pub(crate) fn map2(&self, axis: Axis, out_len: usize, f: impl Fn(&[f64], &mut [f64], &mut [f64])) -> (Plane, Plane) {
        let (n, len) = self.lanes(axis);
        let mut o1 = self.with_len(axis, out_len);
        let mut o2 = self.with_len(axis, out_len);
        let mut a = vec![0.0; len];
        let mut b1 = vec![0.0; out_len];
        let mut b2 = vec![0.0; out_len];
        for i in 0..n {
            self.get_lane(axis, i, &mut a);
            f(&a, &mut b1, &mut b2);
            o1.put_lane(axis, i, &b1);
            o2.put_lane(axis, i, &b2);
        }
        (o1, o2)
    }

    pub(crate) fn merge2(p: &Plane, q: &Plane, axis: Axis, out_len: usize, f: impl Fn(&[f64], &[f64], &mut [f64])) -> Plane {
        let (n, len) = p.lanes(axis);
        let mut out = p.with_len(axis, out_len);
        let mut a = vec![0.0; len];
        let mut b = vec![0.0; len];
        let mut o = vec![0.0; out_len];
        for i in 0..n {
            p.get_lane(axis, i, &mut a);
            q.get_lane(axis, i, &mut b);
            f(&a, &b, &mut o);
            out.put_lane(axis, i, &o);
        }
        out
    }

    pub(crate) fn add_assign(&mut self, other: &Plane) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

