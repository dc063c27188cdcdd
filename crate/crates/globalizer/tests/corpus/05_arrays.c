unsigned char buf[400];
int table[4][8];
void fill(int v)
{
    int i;
    for (i = 0; i < 400; i++)
        buf[i] = v;
    table[1][2] = buf[3];
}
