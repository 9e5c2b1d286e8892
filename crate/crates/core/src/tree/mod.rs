//! Prespecified taxonomy and the linear-algebra objects derived from it.
//!
//! Nodes are indexed `0..T` with the root excluded. Leaves occupy `0..p` in
//! left-to-right Newick order and internal nodes follow in post-order, so a
//! node's children always carry smaller indices than the node itself.

mod newick;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result, TarcoError};
use newick::RawNode;

/// Tolerance under which two child effects count as identical when merging.
pub const MERGE_TOL: f64 = 1e-12;

/// A rooted tree over `p` compositional parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxTree {
    labels: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root_children: Vec<usize>,
    root_label: Option<String>,
    n_leaves: usize,
    leaf_sets: Vec<Vec<usize>>,
    /// Ancestors-or-self of each node, ordered from the node upward.
    lineage: Vec<Vec<usize>>,
}

struct Indexer {
    labels: Vec<String>,
    children: Vec<Vec<usize>>,
    next_leaf: usize,
    next_internal: usize,
}

impl Indexer {
    fn assign(&mut self, node: &RawNode) -> usize {
        if node.children.is_empty() {
            let id = self.next_leaf;
            self.next_leaf += 1;
            self.labels[id] = node.label.clone().unwrap_or_default();
            return id;
        }
        let kids: Vec<usize> = node.children.iter().map(|c| self.assign(c)).collect();
        let id = self.next_internal;
        self.next_internal += 1;
        self.labels[id] = match &node.label {
            Some(l) if !l.is_empty() => l.clone(),
            _ => format!("_n{}", id + 1),
        };
        self.children[id] = kids;
        id
    }
}

fn count(node: &RawNode) -> (usize, usize) {
    if node.children.is_empty() {
        return (1, 1);
    }
    node.children.iter().fold((0, 1), |(l, t), c| {
        let (cl, ct) = count(c);
        (l + cl, t + ct)
    })
}

impl TaxTree {
    /// Parses a single Newick tree (trailing `;` required).
    pub fn parse_newick(text: &str) -> Result<Self> {
        let raw = newick::parse(text)?;
        Self::from_raw(&raw)
    }

    /// Star tree: every leaf hangs directly off the root.
    pub fn star<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let raw = RawNode {
            label: None,
            children: labels
                .iter()
                .map(|l| RawNode {
                    label: Some(l.as_ref().to_string()),
                    children: Vec::new(),
                })
                .collect(),
        };
        Self::from_raw(&raw)
    }

    fn from_raw(root: &RawNode) -> Result<Self> {
        if root.children.is_empty() {
            return Err(TarcoError::Validation(
                "tree must have at least one node below the root".into(),
            ));
        }
        let (n_leaves, total) = count(root);
        let n_nodes = total - 1;
        let mut ix = Indexer {
            labels: vec![String::new(); n_nodes],
            children: vec![Vec::new(); n_nodes],
            next_leaf: 0,
            next_internal: n_leaves,
        };
        let root_children: Vec<usize> = root.children.iter().map(|c| ix.assign(c)).collect();

        let mut seen = std::collections::HashMap::new();
        for (j, l) in ix.labels[..n_leaves].iter().enumerate() {
            if l.is_empty() {
                return Err(TarcoError::Validation(format!(
                    "leaf {} has no label",
                    j + 1
                )));
            }
            if let Some(prev) = seen.insert(l.as_str(), j) {
                return Err(TarcoError::Validation(format!(
                    "duplicate leaf label '{l}' (leaves {} and {})",
                    prev + 1,
                    j + 1
                )));
            }
        }

        let mut parent = vec![None; n_nodes];
        for (k, kids) in ix.children.iter().enumerate() {
            for &c in kids {
                parent[c] = Some(k);
            }
        }
        let mut leaf_sets: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for j in 0..n_leaves {
            leaf_sets[j] = vec![j];
        }
        // post-order indexing: children are always final before their parent
        for k in n_leaves..n_nodes {
            let mut set: Vec<usize> = ix.children[k]
                .iter()
                .flat_map(|&c| leaf_sets[c].iter().copied())
                .collect();
            set.sort_unstable();
            leaf_sets[k] = set;
        }
        let lineage = (0..n_nodes)
            .map(|k| {
                let mut path = vec![k];
                let mut cur = k;
                while let Some(p) = parent[cur] {
                    path.push(p);
                    cur = p;
                }
                path
            })
            .collect();

        Ok(Self {
            labels: ix.labels,
            parent,
            children: ix.children,
            root_children,
            root_label: root.label.clone(),
            n_leaves,
            leaf_sets,
            lineage,
        })
    }

    /// Number of non-root nodes `T`.
    pub fn n_nodes(&self) -> usize {
        self.labels.len()
    }

    /// Number of leaves `p`.
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn label(&self, node: usize) -> &str {
        &self.labels[node]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn leaf_labels(&self) -> &[String] {
        &self.labels[..self.n_leaves]
    }

    pub fn leaf_index(&self, label: &str) -> Option<usize> {
        self.leaf_labels().iter().position(|l| l == label)
    }

    pub fn node_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Parent node, or `None` when the parent is the root.
    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn root_children(&self) -> &[usize] {
        &self.root_children
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node < self.n_leaves
    }

    /// Descendant leaf set `L_k`, sorted.
    pub fn leaf_set(&self, node: usize) -> &[usize] {
        &self.leaf_sets[node]
    }

    pub fn leaf_count(&self, node: usize) -> usize {
        self.leaf_sets[node].len()
    }

    /// Ancestors-or-self of `node`, starting at the node itself.
    pub fn lineage(&self, node: usize) -> &[usize] {
        &self.lineage[node]
    }

    /// Number of non-root nodes on the path from a leaf to the root.
    pub fn depth(&self, node: usize) -> usize {
        self.lineage[node].len()
    }

    /// `Desc(k)`: the node itself and every node below it, ascending.
    pub fn descendants(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out.sort_unstable();
        out
    }

    /// Serializes back to Newick, internal labels included.
    pub fn to_newick(&self) -> String {
        fn write(tree: &TaxTree, k: usize, out: &mut String) {
            let kids = tree.children(k);
            if !kids.is_empty() {
                out.push('(');
                for (i, &c) in kids.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(tree, c, out);
                }
                out.push(')');
            }
            out.push_str(&newick::quote_label(tree.label(k)));
        }
        let mut out = String::from("(");
        for (i, &c) in self.root_children.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write(self, c, &mut out);
        }
        out.push(')');
        if let Some(l) = &self.root_label {
            out.push_str(&newick::quote_label(l));
        }
        out.push(';');
        out
    }

    pub fn aggregation(&self) -> AggregationMatrix {
        build_aggregation(self)
    }
}

/// The 0/1 leaf-by-node ancestor-or-self matrix `A` and its column weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    matrix: DMatrix<f64>,
    leaf_counts: Vec<usize>,
}

pub fn build_aggregation(tree: &TaxTree) -> AggregationMatrix {
    let (p, t) = (tree.n_leaves(), tree.n_nodes());
    let mut a = DMatrix::zeros(p, t);
    for j in 0..p {
        for &k in tree.lineage(j) {
            a[(j, k)] = 1.0;
        }
    }
    AggregationMatrix {
        matrix: a,
        leaf_counts: (0..t).map(|k| tree.leaf_count(k)).collect(),
    }
}

impl AggregationMatrix {
    /// Identity aggregation over `p` parts (star tree).
    pub fn identity(p: usize) -> Self {
        Self {
            matrix: DMatrix::identity(p, p),
            leaf_counts: vec![1; p],
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_leaves(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn leaf_counts(&self) -> &[usize] {
        &self.leaf_counts
    }

    /// Diagonal of `W`, i.e. `|L_k|`.
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.leaf_counts.len(),
            self.leaf_counts.iter().map(|&c| c as f64),
        )
    }

    /// Constraint vector `c = Aᵀ1`, equal to the leaf counts.
    pub fn constraint(&self) -> DVector<f64> {
        self.weights()
    }

    /// `β = Aγ`.
    pub fn expand(&self, gamma: &DVector<f64>) -> Result<DVector<f64>> {
        expand_coefficients(gamma, self)
    }

    /// Right-multiplies an `n×p` design by `A`.
    pub fn aggregate_design(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if z.ncols() != self.n_leaves() {
            return Err(dim_err("aggregate_design", self.n_leaves(), z.ncols()));
        }
        Ok(z * &self.matrix)
    }

    /// Writes `A` as CSV: one row per leaf, one column per node label.
    pub fn write_csv<W: Write>(&self, tree: &TaxTree, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| TarcoError::Validation(format!("csv write failed: {e}"));
        let mut header = vec!["leaf".to_string()];
        header.extend(tree.labels().iter().cloned());
        w.write_record(&header).map_err(io)?;
        for j in 0..self.n_leaves() {
            let mut rec = vec![tree.label(j).to_string()];
            rec.extend((0..self.n_nodes()).map(|k| format!("{}", self.matrix[(j, k)] as u8)));
            w.write_record(&rec).map_err(io)?;
        }
        w.flush()
            .map_err(|e| TarcoError::Validation(format!("csv flush failed: {e}")))?;
        Ok(())
    }
}

/// `β = Aγ` with a dimension check.
pub fn expand_coefficients(gamma: &DVector<f64>, agg: &AggregationMatrix) -> Result<DVector<f64>> {
    if gamma.len() != agg.n_nodes() {
        return Err(dim_err("expand_coefficients", agg.n_nodes(), gamma.len()));
    }
    Ok(&agg.matrix * gamma)
}

/// Bottom-up aggregation of leaf effects into node effects.
///
/// Leaves start with their `β` value and internal nodes with zero. Visiting
/// internal nodes children-first, a node absorbs its children whenever every
/// child is already a leaf of the collapsed tree and all children carry the
/// same value (within [`MERGE_TOL`]). The result satisfies `Aγ = β` with at
/// most one nonzero per root-to-leaf path.
pub fn aggregate_coefficients(beta: &DVector<f64>, tree: &TaxTree) -> Result<DVector<f64>> {
    let p = tree.n_leaves();
    if beta.len() != p {
        return Err(dim_err("aggregate_coefficients", p, beta.len()));
    }
    let t = tree.n_nodes();
    let mut gamma = DVector::zeros(t);
    gamma.rows_mut(0, p).copy_from(beta);
    let mut collapsed = vec![false; t];
    collapsed[..p].fill(true);
    for k in p..t {
        let kids = tree.children(k);
        if !kids.iter().all(|&c| collapsed[c]) {
            continue;
        }
        let v = gamma[kids[0]];
        if kids.iter().all(|&c| (gamma[c] - v).abs() <= MERGE_TOL) {
            for &c in kids {
                gamma[c] = 0.0;
            }
            gamma[k] = v;
            collapsed[k] = true;
        }
    }
    Ok(gamma)
}

/// Null-space basis of `cᵀ` that eliminates the reference leaf coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    matrix: DMatrix<f64>,
    reference: usize,
    /// Node index carried by each column.
    columns: Vec<usize>,
}

impl BasisMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Maps reduced coordinates `γ_{∖ref}` back to a feasible `γ`.
    pub fn lift(&self, reduced: &DVector<f64>) -> Result<DVector<f64>> {
        if reduced.len() != self.matrix.ncols() {
            return Err(dim_err(
                "BasisMatrix::lift",
                self.matrix.ncols(),
                reduced.len(),
            ));
        }
        Ok(&self.matrix * reduced)
    }
}

/// Column for node `k ≠ ref` is `e_k − |L_k| e_ref`.
pub fn build_basis(agg: &AggregationMatrix, reference: usize) -> Result<BasisMatrix> {
    let t = agg.n_nodes();
    if reference >= t || agg.leaf_counts()[reference] != 1 || reference >= agg.n_leaves() {
        return Err(TarcoError::Validation(format!(
            "reference {} is not a leaf",
            reference + 1
        )));
    }
    let columns: Vec<usize> = (0..t).filter(|&k| k != reference).collect();
    let mut b = DMatrix::zeros(t, t - 1);
    for (col, &k) in columns.iter().enumerate() {
        b[(k, col)] = 1.0;
        b[(reference, col)] = -(agg.leaf_counts()[k] as f64);
    }
    Ok(BasisMatrix {
        matrix: b,
        reference,
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn fig1() -> TaxTree {
        TaxTree::parse_newick("((a,b)n4,c);").unwrap()
    }

    #[test]
    fn fig1_indexing() {
        let t = fig1();
        assert_eq!((t.n_leaves(), t.n_nodes()), (3, 4));
        assert_eq!(t.leaf_set(3), &[0, 1]);
        assert_eq!(t.label(3), "n4");
        assert_eq!(t.children(3), &[0, 1]);
        assert_eq!(t.root_children(), &[3, 2]);
        assert_eq!(t.parent(0), Some(3));
        assert_eq!(t.parent(2), None);
        assert_eq!(t.descendants(3), vec![0, 1, 3]);
    }

    #[test]
    fn degenerate_and_balanced() {
        let t = TaxTree::parse_newick("(a);").unwrap();
        assert_eq!((t.n_leaves(), t.n_nodes()), (1, 1));
        let t = TaxTree::parse_newick("((a,b),(c,d));").unwrap();
        assert_eq!((t.n_leaves(), t.n_nodes()), (4, 6));
        assert_eq!(t.leaf_set(4), &[0, 1]);
        assert_eq!(t.leaf_set(5), &[2, 3]);
        assert_eq!(t.label(4), "_n5");
        let a = t.aggregation();
        assert_eq!(a.matrix().column(4).as_slice(), &[1.0, 1.0, 0.0, 0.0]);
        assert!(TaxTree::parse_newick("a;").is_err());
    }

    #[test]
    fn duplicate_leaf_rejected() {
        assert!(matches!(
            TaxTree::parse_newick("((a,b),a);"),
            Err(TarcoError::Validation(_))
        ));
        assert!(TaxTree::parse_newick("((a,b)a,c);").is_ok());
        assert!(TaxTree::parse_newick("(a,,b);").is_err());
    }

    #[test]
    fn fig1_aggregation_matrix() {
        let a = fig1().aggregation();
        let expected =
            DMatrix::from_row_slice(3, 4, &[1., 0., 0., 1., 0., 1., 0., 1., 0., 0., 1., 0.]);
        assert_eq!(a.matrix(), &expected);
        assert_eq!(a.constraint(), dvector![1., 1., 1., 2.]);
    }

    #[test]
    fn star_is_identity() {
        let t = TaxTree::star(&["x", "y", "z", "w"]).unwrap();
        let a = t.aggregation();
        assert_eq!(a.matrix(), &DMatrix::identity(4, 4));
        assert_eq!(a.weights(), DVector::from_element(4, 1.0));
        assert_eq!(a, AggregationMatrix::identity(4));
    }

    #[test]
    fn row_sums_are_depths() {
        let t = TaxTree::parse_newick("(((a,b)x,c)y,(d,(e,f,g)z)w,h);").unwrap();
        let a = t.aggregation();
        for j in 0..t.n_leaves() {
            assert_eq!(a.matrix().row(j).sum() as usize, t.depth(j));
        }
        for k in 0..t.n_nodes() {
            assert_eq!(a.matrix().column(k).sum() as usize, t.leaf_count(k));
        }
    }

    #[test]
    fn fig1_aggregate() {
        let t = fig1();
        let g = aggregate_coefficients(&dvector![0.5, 0.5, -1.0], &t).unwrap();
        assert_eq!(g, dvector![0.0, 0.0, -1.0, 0.5]);
        let g = aggregate_coefficients(&dvector![1.0, -1.0, 0.0], &t).unwrap();
        assert_eq!(g, dvector![1.0, -1.0, 0.0, 0.0]);
        let g = aggregate_coefficients(&DVector::zeros(3), &t).unwrap();
        assert_eq!(g, DVector::zeros(4));
    }

    #[test]
    fn blocked_parent_does_not_merge() {
        // y's children are {x, c}; x cannot collapse, so y must not either
        let t = TaxTree::parse_newick("(((a,b)x,c)y,d);").unwrap();
        let g = aggregate_coefficients(&dvector![1.0, 2.0, 0.0, 0.0], &t).unwrap();
        assert_eq!(g, dvector![1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let g = aggregate_coefficients(&dvector![3.0, 3.0, 3.0, 0.0], &t).unwrap();
        assert_eq!(g, dvector![0.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn expand_examples() {
        let a = fig1().aggregation();
        assert_eq!(
            a.expand(&dvector![0.0, 0.0, -1.0, 0.5]).unwrap(),
            dvector![0.5, 0.5, -1.0]
        );
        assert_eq!(
            a.expand(&dvector![0.0, 0.0, 0.0, 1.0]).unwrap(),
            dvector![1.0, 1.0, 0.0]
        );
        assert!(a.expand(&dvector![1.0, 2.0]).is_err());
    }

    #[test]
    fn basis_examples() {
        let a = fig1().aggregation();
        let b = build_basis(&a, 2).unwrap();
        assert_eq!(b.columns(), &[0, 1, 3]);
        assert_eq!(b.matrix().column(2).as_slice(), &[0.0, 0.0, -2.0, 1.0]);
        let ctb = a.constraint().transpose() * b.matrix();
        assert!(ctb.iter().all(|&v| v == 0.0));
        assert_eq!(b.matrix().rank(1e-10), 3);
        assert!(build_basis(&a, 3).is_err());

        let star = AggregationMatrix::identity(4);
        let b = build_basis(&star, 3).unwrap();
        assert_eq!(b.matrix().column(0).as_slice(), &[1.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn newick_roundtrip_is_stable() {
        let src = "(((a,b)x,c),(d,'e f'),g);";
        let t = TaxTree::parse_newick(src).unwrap();
        let again = TaxTree::parse_newick(&t.to_newick()).unwrap();
        assert_eq!(t, again);
        assert_eq!(TaxTree::parse_newick(src).unwrap(), t);
    }

    #[test]
    fn csv_export() {
        let t = fig1();
        let mut buf = Vec::new();
        t.aggregation().write_csv(&t, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "leaf,a,b,c,n4\na,1,0,0,1\nb,0,1,0,1\nc,0,0,1,0\n");
    }
}
