//! Binary particle ensemble snapshots.
//!
//! Layout (little endian): magic `EFSNAP01`, step `u64`, tau `f64`,
//! particles `u32`, agents `u32`, then per particle the agent locations
//! (`u16` each), phases (`u8`), route choices (`u8`) and the log weight
//! (`f64`). Particles are restored with the model's planned departures.

use std::io::{Read, Write};

use crate::inference::ParticleEnsemble;
use crate::kinetic::TimeGrid;
use crate::traffic::{TrafficModel, TrafficState};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"EFSNAP01";

pub fn write_snapshot<W: Write>(mut w: W, ensemble: &ParticleEnsemble<TrafficState>, tau: f64) -> Result<()> {
    let agents = ensemble.particles.first().map_or(0, |p| p.num_agents());
    w.write_all(MAGIC)?;
    w.write_all(&ensemble.step.to_le_bytes())?;
    w.write_all(&tau.to_le_bytes())?;
    w.write_all(&(ensemble.len() as u32).to_le_bytes())?;
    w.write_all(&(agents as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(agents * 4 + 8);
    for (p, &lw) in ensemble.particles.iter().zip(&ensemble.log_weights) {
        buf.clear();
        for &l in &p.loc {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        buf.extend_from_slice(&p.phase);
        buf.extend_from_slice(&p.choice);
        buf.extend_from_slice(&lw.to_le_bytes());
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_snapshot<R: Read>(mut r: R, model: &TrafficModel, grid: &TimeGrid) -> Result<ParticleEnsemble<TrafficState>> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(Error::invalid("not an ensemble snapshot"));
    }
    let step = u64::from_le_bytes(read_array(&mut r)?);
    let tau = f64::from_le_bytes(read_array(&mut r)?);
    let k = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if (tau - grid.tau).abs() > 1e-12 * grid.tau {
        return Err(Error::invalid(format!("snapshot time step {tau} differs from the scenario's {}", grid.tau)));
    }
    if n != model.num_agents() {
        return Err(Error::invalid(format!("snapshot has {n} agents, scenario has {}", model.num_agents())));
    }
    let t = grid.time_of(step);
    let mut particles = Vec::with_capacity(k);
    let mut log_weights = Vec::with_capacity(k);
    let mut buf = vec![0u8; n * 4];
    for _ in 0..k {
        r.read_exact(&mut buf)?;
        let loc = buf[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        let phase = buf[2 * n..3 * n].to_vec();
        let choice = &buf[3 * n..];
        particles.push(model.restore_state(loc, phase, choice, model.base_schedule.clone(), t)?);
        log_weights.push(f64::from_le_bytes(read_array(&mut r)?));
    }
    let mut ens = ParticleEnsemble::new(particles, step)?;
    ens.log_weights = log_weights;
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::pf_mutate;
    use crate::scenario::generate_synthtown;
    use crate::traffic::RouteWeights;

    #[test]
    fn round_trip_preserves_particles() {
        let mut s = generate_synthtown(4);
        s.plans.agents.truncate(300);
        let c = s.compile().unwrap();
        let grid = c.scenario.grid;
        let mut ens = ParticleEnsemble::replicate(c.model.initial(), 6, 0).unwrap();
        pf_mutate(&*c.model, &mut ens, &RouteWeights::default(), &grid, 290_000, 7, &mut [] as &mut [()]).unwrap();
        ens.log_weights = vec![-1.0, -2.0, 0.0, -0.5, -3.0, -1.5];
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &ens, grid.tau).unwrap();
        let back = read_snapshot(bytes.as_slice(), &c.model, &grid).unwrap();
        assert_eq!(back.step, ens.step);
        assert_eq!(back.log_weights, ens.log_weights);
        for (a, b) in back.particles.iter().zip(&ens.particles) {
            assert_eq!(a.loc, b.loc);
            assert_eq!(a.phase, b.phase);
            assert_eq!(a.choice, b.choice);
            assert_eq!(a.counts, b.counts);
        }
    }

    #[test]
    fn rejects_other_files() {
        let c = generate_synthtown(4).compile().unwrap();
        assert!(read_snapshot(&b"not a snapshot at all"[..], &c.model, &c.scenario.grid).is_err());
    }
}
