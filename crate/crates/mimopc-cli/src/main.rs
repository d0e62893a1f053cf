fn main() {
    mimopc::probe();
}
