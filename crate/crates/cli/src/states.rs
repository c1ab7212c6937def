use crate::error::{CliError, CliResult};
use hdqkd::qudit::{probability_matrix, Basis, StateId, StateVector};
use hdqkd::{CascadeTree, OverlapMatrix};
use std::path::{Path, PathBuf};

pub const SUPPORTED_DIMS: [usize; 3] = [2, 4, 8];

/// Probability matrix and per-state output PDFs of the interferometer tree.
#[derive(Debug, Clone)]
pub struct StateDump {
    pub dim: usize,
    pub matrix: OverlapMatrix,
    /// `state,detector,bin,probability` rows, states labelled `t<n>` / `f<n>`.
    pub cascade_csv: String,
    pub output_bins: usize,
    pub central_bin: usize,
}

fn label(id: StateId) -> String {
    let b = match id.basis {
        Basis::Time => 't',
        Basis::Phase => 'f',
    };
    format!("{b}{}", id.index)
}

pub fn dump_states(dim: usize) -> CliResult<StateDump> {
    if !SUPPORTED_DIMS.contains(&dim) {
        return Err(CliError::Config(format!(
            "unsupported dimension {dim}; choose one of {SUPPORTED_DIMS:?}"
        )));
    }
    let matrix = probability_matrix::<f64>(dim)?;
    let tree = CascadeTree::standard(dim)?;
    let mut cascade_csv = String::from("state,detector,bin,probability\n");
    for id in StateId::all(dim) {
        let response = tree.response(&StateVector::prepare(id, dim)?)?;
        let name = label(id);
        for line in response.to_csv().lines().skip(1) {
            cascade_csv.push_str(&name);
            cascade_csv.push(',');
            cascade_csv.push_str(line);
            cascade_csv.push('\n');
        }
    }
    Ok(StateDump {
        dim,
        matrix,
        cascade_csv,
        output_bins: tree.output_bins(),
        central_bin: tree.central_bin(),
    })
}

/// Writes `probability_matrix_d<d>.csv` and `cascade_pdf_d<d>.csv`.
pub fn write_states(dump: &StateDump, dir: &Path) -> CliResult<[PathBuf; 2]> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let m = dir.join(format!("probability_matrix_d{}.csv", dump.dim));
    let c = dir.join(format!("cascade_pdf_d{}.csv", dump.dim));
    std::fs::write(&m, dump.matrix.to_csv()).map_err(|e| CliError::io(&m, e))?;
    std::fs::write(&c, &dump.cascade_csv).map_err(|e| CliError::io(&c, e))?;
    Ok([m, c])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_basis_quarter_at_d4() {
        let d = dump_states(4).unwrap();
        for i in 0..4 {
            for j in 4..8 {
                assert!((d.matrix.get(i, j) - 0.25).abs() < 1e-12);
            }
        }
        assert_eq!(d.output_bins, 7);
    }

    #[test]
    fn d2_has_three_bins() {
        let d = dump_states(2).unwrap();
        assert_eq!(d.output_bins, 3);
        assert_eq!(d.cascade_csv.lines().count(), 1 + 4 * 2 * 3);
    }

    #[test]
    fn unsupported_dims() {
        for d in [0, 3, 16] {
            assert!(matches!(dump_states(d), Err(CliError::Config(_))));
        }
    }

    #[test]
    fn matrix_csv_round_trips() {
        let d = dump_states(8).unwrap();
        let back = OverlapMatrix::from_csv(&d.matrix.to_csv()).unwrap();
        assert_eq!(back, d.matrix);
    }
}
