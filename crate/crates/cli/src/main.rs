fn main() {
    if let Err(e) = pluralad::run_from(std::env::args_os()) {
        if !e.message.is_empty() {
            eprintln!("error: {}", e.message);
        }
        std::process::exit(e.code);
    }
}
