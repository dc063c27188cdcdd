int seed = 42;
static unsigned short port = 80, mask[2] = {0xff, 0};
char name[8] = "uip";
int cleared = 0;
int get(void)
{
    return seed + port + mask[0] + name[0] + cleared;
}
