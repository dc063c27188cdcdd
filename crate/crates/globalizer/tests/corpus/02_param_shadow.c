int x;
void f(int x){ x=1; }
void g(){ x=2; }
