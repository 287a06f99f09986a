//! Discrete identifiers and the prefix tree that constrains decoding.

use std::fmt;

use crate::error::{Error, Result};

/// Length-`M` sequence of per-level token indices naming a database item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Identifier(Vec<u32>);

impl Identifier {
    pub fn new(tokens: Vec<u32>) -> Self {
        Identifier(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl From<Vec<u32>> for Identifier {
    fn from(tokens: Vec<u32>) -> Self {
        Identifier(tokens)
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("-")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Union token layout: level `m` token `l` has global id `m * L + l`, and the
/// begin-of-sequence token is `M * L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenVocabulary {
    pub levels: usize,
    pub codebook_size: usize,
}

impl TokenVocabulary {
    pub fn new(levels: usize, codebook_size: usize) -> Result<Self> {
        if levels == 0 || codebook_size == 0 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs levels >= 1 and codebook size >= 1, got {levels}x{codebook_size}"
            )));
        }
        Ok(Self {
            levels,
            codebook_size,
        })
    }

    /// Number of level tokens, `M * L` (excludes the begin token).
    pub fn size(&self) -> usize {
        self.levels * self.codebook_size
    }

    pub fn bos(&self) -> u32 {
        self.size() as u32
    }

    #[inline]
    pub fn global(&self, level: usize, token: u32) -> u32 {
        debug_assert!(level < self.levels && (token as usize) < self.codebook_size);
        (level * self.codebook_size) as u32 + token
    }

    /// Inverse of [`global`](Self::global); `None` for the begin token or out of range.
    pub fn split(&self, global: u32) -> Option<(usize, u32)> {
        let g = global as usize;
        (g < self.size()).then(|| (g / self.codebook_size, (g % self.codebook_size) as u32))
    }

    /// Global id range of the tokens that may appear at `level`.
    pub fn level_range(&self, level: usize) -> std::ops::Range<usize> {
        level * self.codebook_size..(level + 1) * self.codebook_size
    }

    /// Checks length and per-token range of an identifier.
    pub fn check(&self, id: &Identifier) -> std::result::Result<(), String> {
        if id.len() != self.levels {
            return Err(format!(
                "identifier has length {}, expected {}",
                id.len(),
                self.levels
            ));
        }
        if let Some((m, t)) = id
            .tokens()
            .iter()
            .enumerate()
            .find(|(_, &t)| t as usize >= self.codebook_size)
        {
            return Err(format!(
                "token {t} at level {m} is out of range for codebook size {}",
                self.codebook_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
struct Node {
    /// (token, child) sorted by token.
    children: Vec<(u32, NodeId)>,
    /// Owner rows; non-empty only at depth `M`.
    owners: Vec<usize>,
}

/// Handle to a node of an [`IdTrie`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Immutable prefix tree over the identifiers of a database.
///
/// Every root-to-leaf path has length exactly `M`. Leaves carry the rows that
/// own the identifier, ascending; duplicate identifiers share one leaf.
#[derive(Clone, Debug)]
pub struct IdTrie {
    vocab: TokenVocabulary,
    nodes: Vec<Node>,
    leaves: usize,
    owners: usize,
}

impl IdTrie {
    pub const ROOT: NodeId = NodeId(0);

    /// Builds the trie; `owners[i]` is the database row owning `ids[i]`.
    pub fn build(vocab: TokenVocabulary, ids: &[Identifier], owners: &[usize]) -> Result<Self> {
        if ids.len() != owners.len() {
            return Err(Error::Shape(format!(
                "{} identifiers but {} owners",
                ids.len(),
                owners.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a trie from zero identifiers".into(),
            ));
        }
        let mut nodes = vec![Node::default()];
        let mut leaves = 0;
        for (id, &row) in ids.iter().zip(owners) {
            vocab
                .check(id)
                .map_err(|reason| Error::InvalidRow { row, reason })?;
            let mut cur = 0;
            for &tok in id.tokens() {
                cur = match nodes[cur].children.binary_search_by_key(&tok, |c| c.0) {
                    Ok(pos) => nodes[cur].children[pos].1 .0,
                    Err(pos) => {
                        let child = nodes.len();
                        nodes.push(Node::default());
                        nodes[cur].children.insert(pos, (tok, NodeId(child)));
                        child
                    }
                };
            }
            if nodes[cur].owners.is_empty() {
                leaves += 1;
            }
            nodes[cur].owners.push(row);
        }
        for node in &mut nodes {
            node.owners.sort_unstable();
        }
        Ok(Self {
            vocab,
            nodes,
            leaves,
            owners: ids.len(),
        })
    }

    pub fn vocab(&self) -> TokenVocabulary {
        self.vocab
    }

    pub fn depth(&self) -> usize {
        self.vocab.levels
    }

    /// Number of distinct identifiers.
    pub fn num_leaves(&self) -> usize {
        self.leaves
    }

    /// Number of owner rows across all leaves.
    pub fn num_owners(&self) -> usize {
        self.owners
    }

    /// Node reached by following `prefix` from the root.
    pub fn find(&self, prefix: &[u32]) -> Option<NodeId> {
        let mut cur = 0;
        for tok in prefix {
            let children = &self.nodes[cur].children;
            cur = children[children.binary_search_by_key(tok, |c| c.0).ok()?].1 .0;
        }
        Some(NodeId(cur))
    }

    /// `(token, child)` pairs below `node`, ascending by token.
    pub fn children(&self, node: NodeId) -> &[(u32, NodeId)] {
        &self.nodes[node.0].children
    }

    /// Owner rows of a depth-`M` node, ascending; empty for inner nodes.
    pub fn owners_of(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].owners
    }

    /// Tokens that may follow `prefix`. Fails if `prefix` is not a stored
    /// path or is already a full identifier.
    pub fn allowed(&self, prefix: &[u32]) -> Result<Vec<u32>> {
        if prefix.len() >= self.depth() {
            return Err(Error::UnknownPrefix(prefix.to_vec()));
        }
        let node = self
            .find(prefix)
            .ok_or_else(|| Error::UnknownPrefix(prefix.to_vec()))?;
        Ok(self.children(node).iter().map(|c| c.0).collect())
    }

    /// Owner rows of a full identifier, if stored.
    pub fn owners(&self, id: &Identifier) -> Option<&[usize]> {
        if id.len() != self.depth() {
            return None;
        }
        self.find(id.tokens()).map(|n| self.owners_of(n))
    }

    pub fn contains(&self, id: &Identifier) -> bool {
        self.owners(id).is_some_and(|o| !o.is_empty())
    }

    /// All stored identifiers with their owners, in lexicographic order.
    pub fn leaves(&self) -> Vec<(Identifier, &[usize])> {
        let mut out = Vec::with_capacity(self.leaves);
        let mut path = Vec::with_capacity(self.depth());
        self.walk(0, &mut path, &mut out);
        out
    }

    fn walk<'a>(&'a self, node: usize, path: &mut Vec<u32>, out: &mut Vec<(Identifier, &'a [usize])>) {
        if path.len() == self.depth() {
            out.push((Identifier::new(path.clone()), &self.nodes[node].owners));
            return;
        }
        for &(tok, child) in &self.nodes[node].children {
            path.push(tok);
            self.walk(child.0, path, out);
            path.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::{BTreeSet, HashSet};

    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ids(raw: &[&[u32]]) -> Vec<Identifier> {
        raw.iter().map(|r| Identifier::new(r.to_vec())).collect()
    }

    #[test]
    fn shared_prefix_node() {
        let trie = IdTrie::build(TokenVocabulary::new(2, 4).unwrap(), &ids(&[&[0, 1], &[0, 2]]), &[0, 1])
            .unwrap();
        assert_eq!(trie.allowed(&[]).unwrap(), vec![0]);
        assert_eq!(trie.allowed(&[0]).unwrap(), vec![1, 2]);
        assert_eq!(trie.num_leaves(), 2);
    }

    #[test]
    fn duplicates_merge_into_one_leaf() {
        let trie = IdTrie::build(TokenVocabulary::new(2, 4).unwrap(), &ids(&[&[3, 3], &[3, 3]]), &[1, 0])
            .unwrap();
        assert_eq!(trie.num_leaves(), 1);
        assert_eq!(trie.owners(&Identifier::new(vec![3, 3])).unwrap(), &[0, 1]);
    }

    #[test]
    fn construction_errors_name_the_row() {
        let vocab = TokenVocabulary::new(2, 4).unwrap();
        let err = IdTrie::build(vocab, &ids(&[&[0, 1], &[0, 4]]), &[7, 9]).unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 9, .. }), "{err}");
        let err = IdTrie::build(vocab, &ids(&[&[0, 1, 2]]), &[5]).unwrap_err();
        assert!(matches!(err, Error::InvalidRow { row: 5, .. }));
        assert!(IdTrie::build(vocab, &ids(&[&[0, 1]]), &[0, 1]).is_err());
        assert!(IdTrie::build(vocab, &[], &[]).is_err());
    }

    #[test]
    fn unknown_prefix_is_an_error() {
        let trie = IdTrie::build(TokenVocabulary::new(2, 4).unwrap(), &ids(&[&[0, 1]]), &[0]).unwrap();
        assert!(matches!(trie.allowed(&[1]), Err(Error::UnknownPrefix(_))));
        assert!(trie.allowed(&[0, 1]).is_err());
    }

    #[test]
    fn leaf_count_matches_hash_set_dedup() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vocab = TokenVocabulary::new(4, 3).unwrap();
        let list: Vec<Identifier> = (0..200)
            .map(|_| Identifier::new((0..4).map(|_| rng.random_range(0..3)).collect()))
            .collect();
        let owners: Vec<usize> = (0..200).collect();
        let trie = IdTrie::build(vocab, &list, &owners).unwrap();
        let distinct: HashSet<Vec<u32>> = list.iter().map(|i| i.tokens().to_vec()).collect();
        assert_eq!(trie.num_leaves(), distinct.len());
        assert_eq!(trie.num_owners(), 200);
    }

    fn arb_ids() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..5, 3), 1..60)
    }

    proptest! {
        #[test]
        fn leaves_round_trip(raw in arb_ids()) {
            let list: Vec<Identifier> = raw.iter().cloned().map(Identifier::new).collect();
            let owners: Vec<usize> = (0..list.len()).collect();
            let trie = IdTrie::build(TokenVocabulary::new(3, 5).unwrap(), &list, &owners).unwrap();
            let leaves: BTreeSet<Vec<u32>> = trie.leaves().into_iter().map(|(id, _)| id.into_inner()).collect();
            let expected: BTreeSet<Vec<u32>> = raw.iter().cloned().collect();
            prop_assert_eq!(leaves, expected);

            // every row is stored exactly once
            let mut seen: Vec<usize> = trie.leaves().iter().flat_map(|(_, o)| o.iter().copied()).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, owners);
        }

        #[test]
        fn allowed_matches_linear_scan(raw in arb_ids(), pick in 0usize..1000, depth in 0usize..3) {
            let list: Vec<Identifier> = raw.iter().cloned().map(Identifier::new).collect();
            let owners: Vec<usize> = (0..list.len()).collect();
            let trie = IdTrie::build(TokenVocabulary::new(3, 5).unwrap(), &list, &owners).unwrap();
            let prefix = &raw[pick % raw.len()][..depth];
            let expected: BTreeSet<u32> = raw
                .iter()
                .filter(|id| &id[..depth] == prefix)
                .map(|id| id[depth])
                .collect();
            let got: Vec<u32> = trie.allowed(prefix).unwrap();
            prop_assert!(!got.is_empty());
            prop_assert_eq!(got.into_iter().collect::<BTreeSet<_>>(), expected);
        }
    }

    #[test]
    fn vocabulary_bijection() {
        let vocab = TokenVocabulary::new(4, 16).unwrap();
        let mut seen = HashSet::new();
        for m in 0..4 {
            for l in 0..16 {
                let g = vocab.global(m, l);
                assert!(seen.insert(g));
                assert_eq!(vocab.split(g), Some((m, l)));
            }
        }
        assert_eq!(seen.len(), vocab.size());
        assert_eq!(vocab.split(vocab.bos()), None);
    }
}
