int retry;
void loop(void)
{
retry:
    retry--;
    if (retry > 0)
        goto retry;
}
