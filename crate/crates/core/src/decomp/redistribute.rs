//! Migration of particles to the rank owning the box that contains them.

use std::collections::HashMap;

use super::boxes::BoxDecomposition;
use super::comm::{tags, Comm};
use super::wire::{decode_contacts, decode_particles, encode_contacts, encode_particles, ContactEntry};
use crate::config::ParticleProps;
use crate::error::{Error, Result};
use crate::particles::ParticleStore;
use crate::vec3::Vec3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RedistributeStats {
    pub sent: usize,
    pub received: usize,
    /// Ids of particles that left through the open top on this rank.
    pub removed: Vec<u64>,
    /// True on every rank when any rank's owned set changed.
    pub changed: bool,
}

/// Moves every owned particle to the rank owning the box containing it and
/// drops particles above `top` (open outflow). Ghosts are discarded; the
/// owned segment ends sorted by id. Tangential contact history involving a
/// migrant travels with it when `contacts` is given.
pub fn redistribute(
    store: &mut ParticleStore,
    decomp: &BoxDecomposition,
    comm: &mut Comm,
    props: &ParticleProps,
    top: f64,
    contacts: Option<&mut HashMap<(u64, u64), Vec3>>,
) -> Result<RedistributeStats> {
    store.clear_ghosts();
    let rank = comm.rank();
    let size = comm.size();
    let mine = decomp.boxes_of(rank);
    let mut stats = RedistributeStats::default();
    let mut dest = vec![rank; store.n_owned];
    let mut leaving = false;
    for i in 0..store.n_owned {
        let p = store.pos[i];
        if p[1] >= top {
            dest[i] = usize::MAX;
            stats.removed.push(store.id[i]);
            leaving = true;
            continue;
        }
        let b = decomp.box_of_pos(p);
        let r = decomp.owner[b];
        if r != rank {
            if !mine.iter().any(|&m| decomp.are_adjacent_or_same(m, b)) {
                return Err(Error::numerical(format!(
                    "particle {} at {:?} jumped beyond the boxes adjacent to rank {rank}; the particle step is too large",
                    store.id[i], p
                )));
            }
            dest[i] = r;
            leaving = true;
        }
    }
    if size == 1 {
        if leaving {
            store.retain_owned(|i| dest[i] == rank);
        }
        stats.changed = leaving;
        return Ok(stats);
    }

    let mut batches = vec![Vec::new(); size];
    for i in 0..store.n_owned {
        if dest[i] != rank && dest[i] != usize::MAX {
            batches[dest[i]].push(store.record(i));
        }
    }
    stats.sent = batches.iter().map(Vec::len).sum();
    let outgoing: Vec<Vec<u8>> = batches.iter().map(|b| encode_particles(b)).collect();
    let migrate_contacts = contacts.is_some();
    let contact_out: Vec<Vec<u8>> = match contacts.as_deref() {
        Some(map) => batches
            .iter()
            .map(|b| {
                let ids: Vec<u64> = b.iter().map(|r| r.id).collect();
                let mut entries: Vec<ContactEntry> = map
                    .iter()
                    .filter(|((a, c), _)| ids.contains(a) || ids.contains(c))
                    .map(|(k, v)| (*k, *v))
                    .collect();
                entries.sort_by_key(|e| e.0);
                encode_contacts(&entries)
            })
            .collect(),
        None => Vec::new(),
    };

    store.retain_owned(|i| dest[i] == rank);
    let incoming = comm.alltoall(tags::MIGRATE, outgoing)?;
    for (src, bytes) in incoming.iter().enumerate() {
        if src == rank {
            continue;
        }
        for rec in decode_particles(bytes, src, rank)? {
            if decomp.owner_of_pos(rec.pos) != rank {
                return Err(Error::Protocol { from: src, to: rank, msg: format!("particle {} delivered to the wrong rank", rec.id) });
            }
            store.push_owned_record(&rec, props);
            stats.received += 1;
        }
    }
    if migrate_contacts {
        let incoming = comm.alltoall(tags::CONTACTS, contact_out)?;
        let map = contacts.unwrap();
        for (src, bytes) in incoming.iter().enumerate() {
            if src == rank {
                continue;
            }
            for (k, v) in decode_contacts(bytes, src, rank)? {
                map.insert(k, v);
            }
        }
    }
    store.sort_owned_by_id();
    let local_change = leaving || stats.received > 0;
    stats.changed = comm.all_or(local_change)?;
    Ok(stats)
}
