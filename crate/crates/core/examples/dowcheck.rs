use tabseq::datapipe::{make_windows, prepare, BinConfig, TypeHints};
use tabseq::synthgen::{gen_transactions, TransactionConfig};

fn main() {
    let cfg = TransactionConfig { n_users: 2, rows_per_user: 40, ..Default::default() };
    let table = gen_transactions(&cfg, 11);
    // print day-of-week + hour of first user's rows
    for row in table.rows.iter().take(25) {
        let ts: i64 = row[1].parse().unwrap();
        let day = ts.div_euclid(86_400);
        let dow = (day + 3).rem_euclid(7);
        let hour = ts.rem_euclid(86_400) / 3_600;
        println!("{} day={} dow={} hour={} fraud={}", row[0], day, dow, hour, row[11]);
    }
    let hints = TypeHints {
        label: Some("isFraud?".into()),
        entity: Some("user".into()),
        continuous: vec!["amount".into()],
        ..Default::default()
    };
    let prep = prepare(&table, &hints, &BinConfig::default(), 1.0).unwrap();
    let w = &make_windows(&prep.train[0], 10, 5)[0];
    let dow_col = prep.codec.vocabs.column_index("timestamp.dow").unwrap();
    let v = &prep.codec.vocabs.columns[dow_col];
    let toks: Vec<&str> = (0..10).map(|r| prep.codec.vocabs.decode_in_column(dow_col, w.tokens.get(r, dow_col)).unwrap()).collect();
    println!("window dow tokens: {toks:?} (vocab {:?})", v.tokens);
}
