//! Recorded trajectories and their CSV form.
//!
//! CSV header: `t,rep,truncated,z_1..z_m,prop_1..prop_m,eps_1..eps_m[,eps0_1..eps0_m]`,
//! one row per step `t ≥ 1`, floats with 17 significant digits.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::sa::{StateVector, StepRecord};
use crate::{Matrix, Vector};

/// Flat per-step storage of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    initial: Option<Vec<f64>>,
    iterates: Vec<f64>,
    proposed: Vec<f64>,
    noise: Vec<f64>,
    root_noise: Option<Vec<f64>>,
    truncated: Vec<bool>,
    /// Column-major `m×m` blocks; absent for trajectories read from CSV.
    steps: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn with_capacity(initial: &StateVector, horizon: usize, root_noise: bool) -> Self {
        let m = initial.dim();
        Self {
            dim: m,
            initial: Some(initial.as_slice().to_vec()),
            iterates: Vec::with_capacity(horizon * m),
            proposed: Vec::with_capacity(horizon * m),
            noise: Vec::with_capacity(horizon * m),
            root_noise: root_noise.then(|| Vec::with_capacity(horizon * m)),
            truncated: Vec::with_capacity(horizon),
            steps: Some(Vec::with_capacity(horizon * m * m)),
        }
    }

    pub fn push(&mut self, rec: &StepRecord) {
        debug_assert_eq!(rec.t, self.len() + 1);
        self.iterates.extend(rec.iterate.iter());
        self.proposed.extend(rec.proposed.iter());
        self.noise.extend(rec.noise.iter());
        if let Some(buf) = self.root_noise.as_mut() {
            match &rec.root_noise {
                Some(e0) => buf.extend(e0.iter()),
                None => self.root_noise = None,
            }
        }
        self.truncated.push(rec.truncated);
        if let Some(buf) = self.steps.as_mut() {
            buf.extend(rec.step.iter());
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of steps recorded.
    pub fn len(&self) -> usize {
        self.truncated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truncated.is_empty()
    }

    pub fn initial(&self) -> Option<&[f64]> {
        self.initial.as_deref()
    }

    fn span(&self, t: usize) -> std::ops::Range<usize> {
        assert!(t >= 1 && t <= self.len(), "step {t} outside 1..={}", self.len());
        (t - 1) * self.dim..t * self.dim
    }

    /// `Z_t` for `1 ≤ t ≤ len`.
    pub fn iterate(&self, t: usize) -> &[f64] {
        &self.iterates[self.span(t)]
    }

    pub fn iterate_vector(&self, t: usize) -> Vector {
        Vector::from_column_slice(self.iterate(t))
    }

    pub fn final_iterate(&self) -> &[f64] {
        self.iterate(self.len())
    }

    pub fn proposed(&self, t: usize) -> &[f64] {
        &self.proposed[self.span(t)]
    }

    pub fn noise(&self, t: usize) -> &[f64] {
        &self.noise[self.span(t)]
    }

    /// `ε_t(z⁰)`, when paired draws were recorded.
    pub fn root_noise(&self, t: usize) -> Option<&[f64]> {
        let r = self.span(t);
        self.root_noise.as_ref().map(|b| &b[r])
    }

    pub fn has_root_noise(&self) -> bool {
        self.root_noise.is_some()
    }

    pub fn truncated(&self, t: usize) -> bool {
        self.truncated[t - 1]
    }

    pub fn truncation_count(&self) -> usize {
        self.truncated.iter().filter(|&&b| b).count()
    }

    /// `γ_t(Z_{t−1})`, when step matrices were recorded.
    pub fn step_matrix(&self, t: usize) -> Option<Matrix> {
        let m2 = self.dim * self.dim;
        self.steps
            .as_ref()
            .map(|b| Matrix::from_column_slice(self.dim, self.dim, &b[(t - 1) * m2..t * m2]))
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(m: usize, root_noise: bool) -> Vec<String> {
    let mut h = vec!["t".to_string(), "rep".into(), "truncated".into()];
    for prefix in ["z", "prop", "eps"] {
        h.extend((1..=m).map(|i| format!("{prefix}_{i}")));
    }
    if root_noise {
        h.extend((1..=m).map(|i| format!("eps0_{i}")));
    }
    h
}

/// Writes trajectories (tagged with their replication index) under one header.
///
/// All trajectories must share a dimension and root-noise layout.
pub fn write_trajectories_csv<W: Write>(out: W, trajs: &[(usize, &Trajectory)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some((_, first)) = trajs.first() else {
        return Ok(());
    };
    let (m, paired) = (first.dim(), first.has_root_noise());
    w.write_record(header(m, paired))?;
    let mut row: Vec<String> = Vec::with_capacity(3 + 4 * m);
    for (rep, traj) in trajs {
        if traj.dim() != m || traj.has_root_noise() != paired {
            return Err(Error::Config("trajectories in one CSV must share layout".into()));
        }
        for t in 1..=traj.len() {
            row.clear();
            row.push(t.to_string());
            row.push(rep.to_string());
            row.push(if traj.truncated(t) { "1" } else { "0" }.into());
            row.extend(traj.iterate(t).iter().map(|&x| fmt_f64(x)));
            row.extend(traj.proposed(t).iter().map(|&x| fmt_f64(x)));
            row.extend(traj.noise(t).iter().map(|&x| fmt_f64(x)));
            if let Some(e0) = traj.root_noise(t) {
                row.extend(e0.iter().map(|&x| fmt_f64(x)));
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

/// Reads trajectories written by [`write_trajectories_csv`], grouped by replication
/// in order of first appearance.
pub fn read_trajectories_csv<R: Read>(input: R) -> Result<Vec<(usize, Trajectory)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 6 || cols[..3] != ["t", "rep", "truncated"] {
        return Err(Error::Config(format!("not a trajectory CSV header: {cols:?}")));
    }
    let m = cols.iter().filter(|c| c.starts_with("z_")).count();
    let paired = cols.iter().any(|c| c.starts_with("eps0_"));
    if m == 0 || cols != header(m, paired) {
        return Err(Error::Config(format!("unexpected trajectory CSV header: {cols:?}")));
    }
    let mut out: Vec<(usize, Trajectory)> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number `{}` in column {}", &rec[i], cols[i])))
        };
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad step `{}`", &rec[0])))?;
        let rep: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad rep `{}`", &rec[1])))?;
        let truncated = match rec[2].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            other => return Err(Error::Config(format!("bad truncated flag `{other}`"))),
        };
        let idx = match out.iter().position(|(r, _)| *r == rep) {
            Some(i) => i,
            None => {
                out.push((
                    rep,
                    Trajectory {
                        dim: m,
                        initial: None,
                        iterates: Vec::new(),
                        proposed: Vec::new(),
                        noise: Vec::new(),
                        root_noise: paired.then(Vec::new),
                        truncated: Vec::new(),
                        steps: None,
                    },
                ));
                out.len() - 1
            }
        };
        let traj = &mut out[idx].1;
        if t != traj.len() + 1 {
            return Err(Error::Config(format!(
                "rep {rep}: expected step {}, found {t}",
                traj.len() + 1
            )));
        }
        for i in 0..m {
            traj.iterates.push(parse(3 + i)?);
            traj.proposed.push(parse(3 + m + i)?);
            traj.noise.push(parse(3 + 2 * m + i)?);
            if let Some(b) = traj.root_noise.as_mut() {
                b.push(parse(3 + 3 * m + i)?);
            }
        }
        traj.truncated.push(truncated);
    }
    Ok(out)
}

impl Trajectory {
    /// Copy without the starting point and step matrices, i.e. exactly what CSV carries.
    pub fn csv_view(&self) -> Trajectory {
        Trajectory {
            initial: None,
            steps: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: usize, z: f64, p: f64, e: f64, e0: Option<f64>) -> StepRecord {
        StepRecord {
            t,
            proposed: Vector::from_element(1, p),
            iterate: Vector::from_element(1, z),
            noise: Vector::from_element(1, e),
            root_noise: e0.map(|x| Vector::from_element(1, x)),
            truncated: z != p,
            step: Matrix::from_element(1, 1, 1.0 / t as f64),
        }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            header(2, true).join(","),
            "t,rep,truncated,z_1,z_2,prop_1,prop_2,eps_1,eps_2,eps0_1,eps0_2"
        );
        assert_eq!(header(1, false).join(","), "t,rep,truncated,z_1,prop_1,eps_1");
    }

    #[test]
    fn csv_round_trip_preserves_bits() {
        let init = StateVector::scalar(0.0).unwrap();
        let mut traj = Trajectory::with_capacity(&init, 3, true);
        traj.push(&record(1, 1.0 / 3.0, 5.0, 0.1, Some(-0.7)));
        traj.push(&record(
            2,
            std::f64::consts::PI,
            std::f64::consts::PI,
            1e-300,
            Some(2.5e17),
        ));
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &[(4, &traj)]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,rep,truncated,z_1,prop_1,eps_1,eps0_1\n1,4,1,"));
        let back = read_trajectories_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, 4);
        assert_eq!(back[0].1, traj.csv_view());
        assert_eq!(traj.step_matrix(2).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn rejects_foreign_csv() {
        let bad = "a,b,c\n1,2,3\n";
        assert!(read_trajectories_csv(bad.as_bytes()).is_err());
        let gap = "t,rep,truncated,z_1,prop_1,eps_1\n2,0,0,1,1,0\n";
        assert!(read_trajectories_csv(gap.as_bytes()).is_err());
    }
}
