//! Small hand-built datasets and models with known behaviour.

use crate::agents::ModelConfig;
use crate::dataset::{ClassEntry, Dataset, Split, ViewRange, SPLIT_TEST, SPLIT_TRAIN, SPLIT_VAL};
use crate::model::Model;

/// Two objects with one-dimensional views: object 0 is `-1`, object 1 is `+1`
/// on both sides. Six views each: train 0..4, val 4..5, test 5..6.
pub fn oracle_dataset() -> Dataset {
    let classes = [(-1.0f32, "minus"), (1.0, "plus")]
        .iter()
        .enumerate()
        .map(|(i, &(v, name))| ClassEntry {
            id: i as u32,
            name: name.into(),
            difficulty: Some(1.0),
            sender_views: vec![v; 6],
            receiver_words: vec![v],
        })
        .collect();
    let split = |name: &str, start, end| Split {
        name: name.into(),
        candidates: vec![0, 1],
        ranges: (0..2).map(|class| ViewRange { class, start, end }).collect(),
    };
    Dataset {
        sender_dim: 1,
        sender_set_size: 1,
        receiver_dim: 1,
        classes,
        splits: vec![
            split(SPLIT_TRAIN, 0, 4),
            split(SPLIT_VAL, 4, 5),
            split(SPLIT_TEST, 5, 6),
        ],
    }
}

pub fn oracle_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 1,
        sender_hidden: 1,
        sender_attention_hidden: 1,
        memory_size: 1,
        receiver_message_hidden: 1,
        receiver_attention_hidden: 1,
        baseline_hidden: 1,
        ..ModelConfig::new(1, 1, 1)
    }
}

/// Agents that solve [`oracle_dataset`] in one step: the sender sends the
/// sign bit of its view, the receiver's memory takes the sign of the bit, it
/// stops immediately and the candidate embeddings align with the memory.
/// Both baselines predict a reward of 1.
pub fn oracle_model() -> Model {
    let mut m = Model::new(oracle_config(), 0).expect("valid oracle config");
    for t in m.store.iter_mut() {
        t.values.iter_mut().for_each(|v| *v = 0.0);
    }
    let set = |m: &mut Model, name: &str, values: &[f64]| {
        let id = m.store.id(name).expect("oracle tensor exists");
        m.store.get_mut(id).values = values.to_vec();
    };
    set(&mut m, "sender.img_embed.w", &[1.0]);
    set(&mut m, "sender.hidden.w", &[1.0, 0.0, 0.0, 0.0]);
    set(&mut m, "sender.out.w", &[20.0]);
    set(&mut m, "receiver.gru.b_z", &[20.0]);
    set(&mut m, "receiver.gru.w_h", &[10.0]);
    set(&mut m, "receiver.gru.b_h", &[-5.0]);
    set(&mut m, "receiver.stop.b", &[20.0]);
    set(&mut m, "receiver.embed.w", &[10.0]);
    set(&mut m, "baseline.sender.b2", &[1.0]);
    set(&mut m, "baseline.receiver.b2", &[1.0]);
    m
}

/// `n` classes with constant views and distinct one-hot-ish word vectors.
pub fn constant_dataset(n: usize, views: usize, dim: usize) -> Dataset {
    let classes = (0..n)
        .map(|i| ClassEntry {
            id: i as u32,
            name: format!("class{i}"),
            difficulty: None,
            sender_views: vec![i as f32; views * dim],
            receiver_words: (0..dim).map(|k| if k == i % dim { 1.0 } else { 0.0 }).collect(),
        })
        .collect();
    Dataset {
        sender_dim: dim,
        sender_set_size: 1,
        receiver_dim: dim,
        classes,
        splits: Vec::new(),
    }
}
