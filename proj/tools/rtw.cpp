#include <cstdio>
int main() { std::puts("rtw cli placeholder"); return 0; }
