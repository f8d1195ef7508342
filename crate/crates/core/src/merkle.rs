//! Binary merkle roots over digests.

use crate::codec::{hash_content, hash_parts, Digest};

/// Merkle root of `leaves`.
///
/// The empty list maps to `hash("")`, a single leaf `d` to `hash(d)`, and a
/// pair `(a, b)` to `hash(a ++ b)`. Odd levels duplicate their last node.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    match leaves {
        [] => hash_content(&[]),
        [only] => hash_content(only.as_bytes()),
        _ => {
            let mut level: Vec<Digest> = leaves.to_vec();
            while level.len() > 1 {
                if level.len() % 2 == 1 {
                    level.push(*level.last().expect("non-empty"));
                }
                level = level
                    .chunks_exact(2)
                    .map(|pair| hash_parts(&[pair[0].as_bytes(), pair[1].as_bytes()]))
                    .collect();
            }
            level[0]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(n: u8) -> Digest {
        hash_content(&[n])
    }

    #[test]
    fn base_cases() {
        assert_eq!(merkle_root(&[]), hash_content(b""));
        let d = leaf(1);
        assert_eq!(merkle_root(&[d]), hash_content(d.as_bytes()));
        let (a, b) = (leaf(1), leaf(2));
        assert_eq!(merkle_root(&[a, b]), hash_parts(&[a.as_bytes(), b.as_bytes()]));
    }

    #[test]
    fn odd_levels_duplicate_the_last_node() {
        let (a, b, c) = (leaf(1), leaf(2), leaf(3));
        let ab = hash_parts(&[a.as_bytes(), b.as_bytes()]);
        let cc = hash_parts(&[c.as_bytes(), c.as_bytes()]);
        assert_eq!(merkle_root(&[a, b, c]), hash_parts(&[ab.as_bytes(), cc.as_bytes()]));
    }

    #[test]
    fn every_reordering_of_four_leaves_changes_the_root() {
        let base = [leaf(1), leaf(2), leaf(3), leaf(4)];
        let root = merkle_root(&base);
        let mut seen = std::collections::HashSet::new();
        let idx = [0usize, 1, 2, 3];
        for a in idx {
            for b in idx {
                for c in idx {
                    for d in idx {
                        let p = [a, b, c, d];
                        let mut sorted = p;
                        sorted.sort();
                        if sorted != idx {
                            continue;
                        }
                        let leaves: Vec<Digest> = p.iter().map(|&i| base[i]).collect();
                        let r = merkle_root(&leaves);
                        assert!(seen.insert(r), "permutation {p:?} collided");
                        if p != idx {
                            assert_ne!(r, root);
                        }
                    }
                }
            }
        }
        assert_eq!(seen.len(), 24);
    }
}
