fn main() {
    std::process::exit(fedvt::cli::main_entry());
}
