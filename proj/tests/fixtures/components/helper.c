int helper_setup(int n)
{
	return n * 2;
}
