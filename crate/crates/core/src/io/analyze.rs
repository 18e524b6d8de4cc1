//! CSV products computed from snapshot files.

use super::config::{parse_config, RunConfig};
use super::snapshot::{SnapshotData, MODE_AVERAGE, MODE_FULL};
use crate::error::{Error, Result};
use crate::flavor::Species;
use crate::spectra::{build_spectrum, EnergyGrid};

fn require_mode(data: &SnapshotData, mode: u32, product: &str) -> Result<()> {
    if data.header.mode != mode {
        return Err(Error::Config(format!(
            "{product} needs a mode-{mode} snapshot, got a mode-{} file",
            data.header.mode
        )));
    }
    if data.marks.is_empty() {
        return Err(Error::Config(format!(
            "{product}: the snapshot holds no records"
        )));
    }
    Ok(())
}

fn dims(data: &SnapshotData) -> (usize, usize, usize) {
    let d = |n: &str| data.header.dim(n).unwrap_or(1) as usize;
    (d("theta"), d("phi"), d("ebin"))
}

/// Azimuth-averaged `|a|^2` of `species` per `(theta, ebin)` in record `rec`.
pub fn survival_grid(data: &SnapshotData, rec: usize, species: Species) -> Result<Vec<Vec<f64>>> {
    require_mode(data, MODE_FULL, "the survival grid")?;
    let (theta, phi, ebins) = dims(data);
    let r = data.record(rec);
    let per_traj = 4 * 4 * ebins;
    let mut grid = vec![vec![0.0; ebins]; theta];
    for (j, row) in grid.iter_mut().enumerate() {
        for k in 0..phi {
            let base = (j * phi + k) * per_traj + species.index() * 4 * ebins;
            for (e, v) in row.iter_mut().enumerate() {
                let (ar, ai) = (r[base + e], r[base + ebins + e]);
                *v += (ar * ar + ai * ai) / phi as f64;
            }
        }
    }
    Ok(grid)
}

/// Survival grid of the last record as CSV: `theta,e0,e1,...`.
pub fn survival_csv(data: &SnapshotData, species: Species) -> Result<String> {
    let grid = survival_grid(data, data.marks.len() - 1, species)?;
    let (_, _, ebins) = dims(data);
    let mut out = String::from("theta");
    for e in 0..ebins {
        out.push_str(&format!(",e{e}"));
    }
    out.push('\n');
    for (j, row) in grid.iter().enumerate() {
        out.push_str(&(j as u64 + data.header.theta_offset).to_string());
        for v in row {
            out.push_str(&format!(",{v:.12}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Configuration stored in the snapshot attributes.
pub fn stored_config(data: &SnapshotData) -> Result<RunConfig> {
    if data.header.attrs.trim().is_empty() {
        return Err(Error::Config(
            "the snapshot carries no run configuration".into(),
        ));
    }
    Ok(parse_config(&data.header.attrs)?.config)
}

/// Flavor spectra of the first and last records per energy bin.
///
/// The electron-flavor flux at energy `E` is `f_e(E) <P_a(nu_e)> + f_x(E) <P_a(nu_x)>`
/// with `<.>` the average over trajectories, and likewise for the other
/// flavor and for antineutrinos.
pub fn spectra_csv(data: &SnapshotData) -> Result<String> {
    require_mode(data, MODE_FULL, "the spectra")?;
    let cfg = stored_config(data)?;
    let grid = EnergyGrid::new(cfg.e0, cfg.e1, cfg.ebins)?;
    let (_, _, ebins) = dims(data);
    if ebins != grid.ebins {
        return Err(Error::Snapshot {
            path: Default::default(),
            msg: format!(
                "stored configuration has {} energy bins, data has {ebins}",
                grid.ebins
            ),
        });
    }
    let mut f = Vec::new();
    for s in Species::ALL {
        f.push(build_spectrum(s, cfg.spectrum_params(s)?, grid)?.f);
    }
    let flavor = |rec: usize| -> Result<[Vec<f64>; 4]> {
        let mean: Vec<Vec<f64>> = Species::ALL
            .iter()
            .map(|&s| {
                let g = survival_grid(data, rec, s)?;
                Ok((0..ebins)
                    .map(|e| g.iter().map(|row| row[e]).sum::<f64>() / g.len() as f64)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mix = |e_sp: Species, x_sp: Species, electron: bool| -> Vec<f64> {
            (0..ebins)
                .map(|e| {
                    let (pe, px) = (mean[e_sp.index()][e], mean[x_sp.index()][e]);
                    if electron {
                        f[e_sp.index()][e] * pe + f[x_sp.index()][e] * px
                    } else {
                        f[e_sp.index()][e] * (1.0 - pe) + f[x_sp.index()][e] * (1.0 - px)
                    }
                })
                .collect()
        };
        Ok([
            mix(Species::NuE, Species::NuX, true),
            mix(Species::NuEBar, Species::NuXBar, true),
            mix(Species::NuE, Species::NuX, false),
            mix(Species::NuEBar, Species::NuXBar, false),
        ])
    };
    let first = flavor(0)?;
    let last = flavor(data.marks.len() - 1)?;
    let mut out = String::from("energy");
    for s in Species::ALL {
        out.push_str(&format!(",{0}_initial,{0}_final", s.name()));
    }
    out.push('\n');
    for e in 0..ebins {
        out.push_str(&format!("{:.6}", grid.center(e)));
        for i in 0..4 {
            out.push_str(&format!(",{:.9e},{:.9e}", first[i][e], last[i][e]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Energy-averaged `|a|^2` per record of a mode-2 file, azimuth averaged:
/// `r,iter,species,theta0,theta1,...`.
pub fn averages_csv(data: &SnapshotData) -> Result<String> {
    require_mode(data, MODE_AVERAGE, "the averages table")?;
    let theta = data.header.dim("theta").unwrap_or(1) as usize;
    let phi = data.header.dim("phi").unwrap_or(1) as usize;
    let mut out = String::from("r,iter,species");
    for j in 0..theta {
        out.push_str(&format!(",theta{}", j as u64 + data.header.theta_offset));
    }
    out.push('\n');
    for (i, m) in data.marks.iter().enumerate() {
        let rec = data.record(i);
        for s in Species::ALL {
            out.push_str(&format!("{},{},{}", m.r, m.iter, s.name()));
            for j in 0..theta {
                let v: f64 = (0..phi)
                    .map(|k| rec[(j * phi + k) * 4 + s.index()])
                    .sum::<f64>()
                    / phi as f64;
                out.push_str(&format!(",{v:.12}"));
            }
            out.push('\n');
        }
    }
    Ok(out)
}
