#include <cstdio>
int main() { std::puts("gormpo: stub"); return 0; }
