use proptest::prelude::*;
use rgse::bpe_io::{read_merges, write_merges};
use rgse::checkpoint::{decode_params, encode_params};
use rgse::conllu::{parse_conllu, to_conllu};
use rgse_core::bpe::BpeModel;
use rgse_core::{DepGraph, ParamStore, Tensor};

fn store() -> impl Strategy<Value = ParamStore> {
    prop::collection::btree_map(
        "[a-z]{1,6}(\\.[a-z_]{1,6}){0,2}",
        (1usize..5, 1usize..5).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(any::<f64>(), r * c))),
        0..6,
    )
    .prop_map(|tensors| {
        let mut s = ParamStore::new(0);
        for (name, (r, c, data)) in tensors {
            s.insert(&name, Tensor::matrix(r, c, data).unwrap()).unwrap();
        }
        s
    })
}

fn tree() -> impl Strategy<Value = DepGraph> {
    (1usize..10)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(any::<u32>(), n),
                prop::collection::vec("[a-zA-Z]{1,8}", n),
                prop::collection::vec(prop::sample::select(vec!["nsubj", "obj", "amod", "det", "case"]), n),
            )
        })
        .prop_map(|(picks, tokens, labels)| {
            let n = tokens.len();
            let mut heads = vec![None; n];
            for i in 1..n {
                heads[i] = Some(picks[i] as usize % i);
            }
            let labels: Vec<String> = (0..n).map(|i| if i == 0 { "root".to_string() } else { labels[i].to_string() }).collect();
            DepGraph::from_heads("s", tokens, &heads, Some(&labels)).unwrap()
        })
}

proptest! {
    #[test]
    fn checkpoint_bytes_round_trip(s in store()) {
        let back = decode_params(&encode_params(&s)).unwrap();
        prop_assert_eq!(back.len(), s.len());
        for ((na, ta), (nb, tb)) in s.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.shape(), tb.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(ta), bits(tb));
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected(s in store(), cut in 1usize..64) {
        let bytes = encode_params(&s);
        prop_assume!(s.num_scalars() > 0);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(decode_params(&bytes[..keep]).is_err());
    }

    #[test]
    fn conllu_round_trip(graphs in prop::collection::vec(tree(), 0..4)) {
        let named: Vec<DepGraph> = graphs
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let heads = g.heads().unwrap();
                let labels: Vec<String> = (0..g.len()).map(|d| heads[d].map_or("root".to_string(), |h| g.label(d, h).unwrap().to_string())).collect();
                DepGraph::from_heads(format!("s{}", i + 1), g.tokens().to_vec(), &heads, Some(&labels)).unwrap()
            })
            .collect();
        let text = to_conllu(&named).unwrap();
        prop_assert_eq!(parse_conllu(&text).unwrap(), named);
    }

    #[test]
    fn merges_round_trip(merges in prop::collection::vec(("[a-z]{1,4}", "[a-z]{1,4}(</w>)?"), 0..20)) {
        let model = BpeModel::from_merges(merges);
        prop_assert_eq!(read_merges(&write_merges(&model)).unwrap(), model);
    }
}
