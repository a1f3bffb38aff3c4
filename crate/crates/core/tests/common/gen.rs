//! Random scripts that satisfy every validation rule.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use storysync::script::HEADER;

const SIGNALS: [&str; 3] = ["go", "thumbs_up", "next"];
const STYLES: [&str; 4] = ["sad", "cheerful", "terrified", "whispering"];
const WORDS: [&str; 8] = ["hello", "glitch", "friend", "why", "stop", "look", "there", "okay"];

pub struct Generated {
    pub source: String,
    pub rows: usize,
}

fn speech(rng: &mut ChaCha8Rng) -> String {
    let mut s = String::new();
    if rng.gen_bool(0.3) {
        s.push_str(&format!("[style={}]", STYLES.choose(rng).unwrap()));
    }
    for _ in 0..rng.gen_range(1..6) {
        match rng.gen_range(0..10) {
            0 => s.push_str("{g/nod}"),
            1 => s.push_str(&format!("{{d/{}}}", rng.gen_range(0..800))),
            2 => s.push_str(&format!("{{p/{}}}", rng.gen_range(-50..=100))),
            _ => {}
        }
        s.push_str(WORDS.choose(rng).unwrap());
        s.push(' ');
    }
    s.trim_end().to_string()
}

fn action(rng: &mut ChaCha8Rng) -> (String, String, String) {
    let (kind, device, payload) = match rng.gen_range(0..10) {
        0..=2 => ("speak", ["AVATAR", "FUSE"].choose(rng).unwrap().to_string(), speech(rng)),
        3 => ("gesture", "FUSE".to_string(), "nod".to_string()),
        4 => (
            "light",
            "FEELMOON".to_string(),
            format!(
                "color=#{:06x}; pattern=pulse:{}; brightness=0.{}",
                rng.gen_range(0..0xffffff),
                rng.gen_range(1..=20),
                rng.gen_range(0..10)
            ),
        ),
        5 => (
            "sound",
            "SPEAKER".to_string(),
            format!("clip=s{}.wav; loop={}", rng.gen_range(0..5), rng.gen_bool(0.5)),
        ),
        6 => ("gui", "MATRIX".to_string(), format!("screen=s{}; k=v", rng.gen_range(0..3))),
        7 => ("award", String::new(), rng.gen_range(0..500).to_string()),
        8 => ("set", String::new(), format!("flag = {}", rng.gen_bool(0.5))),
        _ => ("wait", String::new(), rng.gen_range(0..2000).to_string()),
    };
    (kind.to_string(), device, payload)
}

pub fn script(rng: &mut ChaCha8Rng) -> Generated {
    let n = rng.gen_range(3..16);
    let scenes = rng.gen_range(1..=4.min(n));
    // scene boundaries: first row of each scene
    let mut cuts: Vec<usize> = (1..n).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(scenes - 1).collect();
    cuts.sort();

    let mut out = String::new();
    out.push_str(&HEADER.join("\t"));
    out.push('\n');
    out.push_str("@title\tgenerated\n");
    for (id, role) in [
        ("AVATAR", "robot_actor"),
        ("FUSE", "robot_actor"),
        ("FEELMOON", "light"),
        ("MATRIX", "screen"),
        ("SPEAKER", "audio"),
    ] {
        out.push_str(&format!("@device\t{id}\t{role}\n"));
    }
    out.push_str("@var\tflag\tfalse\n");
    out.push_str("@gesture\tnod\tNod\tagreeing\tbuiltin\n");

    let mut scene = 0;
    for i in 0..n {
        if cuts.contains(&i) {
            scene += 1;
        }
        let trigger = match rng.gen_range(0..10) {
            0..=4 => "auto".to_string(),
            5 | 6 => format!("after_prev_delay:{}", rng.gen_range(0..3000)),
            _ => format!("operator_gate:{}", SIGNALS.choose(rng).unwrap()),
        };
        let trigger = match rng.gen_range(0..8) {
            0 => format!("{trigger} if points > {}", rng.gen_range(0..300)),
            1 => format!("{trigger} if flag == true"),
            _ => trigger,
        };
        let branch = if i + 1 < n && rng.gen_bool(0.2) {
            let k = rng.gen_range(1..=3);
            let mut opts = vec!["prompt".to_string()];
            for c in 0..k {
                let target = rng.gen_range(i + 1..n);
                opts.push(format!("c{c}:{}:r{target}:Option {c}", rng.gen_range(0..1001)));
            }
            opts.join("|")
        } else {
            String::new()
        };
        let actions = rng.gen_range(1..=3);
        for a in 0..actions {
            let (kind, device, payload) = action(rng);
            if a == 0 {
                out.push_str(&format!(
                    "r{i}\tscene{scene}\t{trigger}\t{kind}\t{device}\t{payload}\t{branch}\n"
                ));
            } else {
                out.push_str(&format!("r{i}\t\t\t{kind}\t{device}\t{payload}\t\n"));
            }
        }
    }
    Generated { source: out, rows: n }
}
