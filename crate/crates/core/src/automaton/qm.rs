//! Two-level minimization of guard truth tables (Quine-McCluskey with a
//! greedy cover after the essential primes).

use std::collections::BTreeSet;

/// A product term: bits in `care` must equal the corresponding bits in `value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Implicant {
    pub value: u32,
    pub care: u32,
}

impl Implicant {
    pub fn covers(&self, minterm: u32) -> bool {
        (minterm & self.care) == self.value
    }

    pub fn literal_count(&self) -> u32 {
        self.care.count_ones()
    }
}

/// Minimal-ish sum of products for the function that is true exactly on `minterms`.
///
/// Returns an empty list for the constant-false function and a single
/// implicant with `care == 0` for the constant-true function.
pub fn minimize(n_vars: u32, minterms: &[u32]) -> Vec<Implicant> {
    if minterms.is_empty() {
        return vec![];
    }
    let full = if n_vars == 32 { u32::MAX } else { (1u32 << n_vars) - 1 };
    let on: BTreeSet<u32> = minterms.iter().copied().collect();
    let primes = prime_implicants(full, &on);

    let mut uncovered = on.clone();
    let mut chosen: Vec<Implicant> = Vec::new();

    // Essential primes: the only prime covering some minterm.
    for &m in &on {
        let covering: Vec<&Implicant> = primes.iter().filter(|p| p.covers(m)).collect();
        if covering.len() == 1 && !chosen.contains(covering[0]) {
            chosen.push(*covering[0]);
        }
    }
    for p in &chosen {
        uncovered.retain(|&m| !p.covers(m));
    }
    while !uncovered.is_empty() {
        let best = primes
            .iter()
            .filter(|p| !chosen.contains(p))
            .max_by(|a, b| {
                let ca = uncovered.iter().filter(|&&m| a.covers(m)).count();
                let cb = uncovered.iter().filter(|&&m| b.covers(m)).count();
                ca.cmp(&cb)
                    .then(b.literal_count().cmp(&a.literal_count()))
                    .then(b.cmp(a))
            })
            .copied()
            .expect("primes cover every minterm");
        uncovered.retain(|&m| !best.covers(m));
        chosen.push(best);
    }
    chosen.sort();
    chosen
}

fn prime_implicants(full: u32, on: &BTreeSet<u32>) -> Vec<Implicant> {
    let mut current: BTreeSet<Implicant> = on
        .iter()
        .map(|&m| Implicant { value: m, care: full })
        .collect();
    let mut primes = BTreeSet::new();
    while !current.is_empty() {
        let mut next = BTreeSet::new();
        let mut merged = BTreeSet::new();
        let items: Vec<Implicant> = current.iter().copied().collect();
        for (i, a) in items.iter().enumerate() {
            for b in &items[i + 1..] {
                if a.care != b.care {
                    continue;
                }
                let diff = a.value ^ b.value;
                if diff.count_ones() == 1 {
                    let care = a.care & !diff;
                    next.insert(Implicant {
                        value: a.value & care,
                        care,
                    });
                    merged.insert(*a);
                    merged.insert(*b);
                }
            }
        }
        for imp in &items {
            if !merged.contains(imp) {
                primes.insert(*imp);
            }
        }
        current = next;
    }
    primes.into_iter().collect()
}
